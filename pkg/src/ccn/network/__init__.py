"""Interest extraction, collaborative module and the CTR model."""

from .attention import (
    MHTAParams,
    TsiParams,
    attention_weights,
    mhta,
    sequence_interaction_repr,
    sim_category_search,
)
from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .collaborative import (
    CollaborativeParams,
    ContextSplit,
    PairPrior,
    attraction_loss,
    collaborative_degree,
    importance_weights,
    pair_label_prior,
    pair_prior_monte_carlo,
    repulsion_loss,
    split_context_sets,
)
from .ctr_model import (
    CCNModel,
    LossBreakdown,
    build_training_graph,
    collaborative_degrees,
    contrastive_losses,
    predict_batch,
    predict_ctr,
    predict_logits,
    total_loss,
)

__all__ = [
    "MHTAParams",
    "TsiParams",
    "mhta",
    "attention_weights",
    "sim_category_search",
    "sequence_interaction_repr",
    "CollaborativeParams",
    "ContextSplit",
    "PairPrior",
    "collaborative_degree",
    "split_context_sets",
    "importance_weights",
    "repulsion_loss",
    "attraction_loss",
    "pair_label_prior",
    "pair_prior_monte_carlo",
    "CCNModel",
    "LossBreakdown",
    "build_training_graph",
    "total_loss",
    "contrastive_losses",
    "predict_ctr",
    "predict_batch",
    "predict_logits",
    "collaborative_degrees",
    "FORMAT_VERSION",
    "save_checkpoint",
    "load_checkpoint",
]
