"""
CTR model: backbone, collaborative module and the training objective.

Prediction path (never reads the in-page context):

    y_hat = sigmoid(MLP(E_user ++ E_target ++ E_trigger ++ H_tsi ++ s_target))

The s_target slot exists only for variants with the collaborative module.
The training objective adds the contrastive terms on top of cross-entropy:

    L = L_CE + lambda * (L_rep + (P- / P+) * L_att)
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..autodiff import Graph, Node, forward_eval
from ..autodiff.init import uniform_init, xavier_init, zeros_init
from ..config import HyperParams, NetworkConfig
from ..errors import VariantError
from ..features.embedding import (
    EmbeddingTables,
    FeatureSchema,
    SampleBatch,
    collate_samples,
    embed_items_node,
    embed_users_node,
    table_name,
)
from ..models.records import ScoringRequest, TrainingSample
from ..models.variant import ModelVariant
from .attention import build_tsi, tsi_blocks
from .collaborative import (
    PairPrior,
    build_attraction,
    build_collaborative_degree,
    build_repulsion,
    split_masks,
)

logger = logging.getLogger(__name__)

Shape = Tuple[int, ...]

# scoring is chunked so padded long sequences stay small in memory
PREDICT_CHUNK = 512


# ==============================================================================
# PARAMETER LAYOUT
# ==============================================================================

def _mlp_shapes(prefix: str, widths: List[int]) -> Dict[str, Shape]:
    shapes: Dict[str, Shape] = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        shapes[f"{prefix}.w{i}"] = (fan_in, fan_out)
        shapes[f"{prefix}.b{i}"] = (fan_out,)
    return shapes


def prediction_input_width(schema: FeatureSchema, variant: ModelVariant) -> int:
    d = schema.embedding_dim
    width = schema.user_width + 2 * schema.item_width + len(tsi_blocks(variant.uses_tsi)) * d
    return width + (1 if variant.uses_collaborative else 0)


def parameter_shapes(
    schema: FeatureSchema, network: NetworkConfig, variant: ModelVariant
) -> Dict[str, Shape]:
    """Name -> shape of every parameter, in a fixed order."""
    d = schema.embedding_dim
    shapes: Dict[str, Shape] = {
        table_name(family): (buckets, d) for family, buckets in schema.families.items()
    }
    shapes["tsi.proj"] = (schema.item_width, d)
    for block in tsi_blocks(variant.uses_tsi):
        for w in ("wq", "wk", "wv"):
            shapes[f"tsi.{block}.{w}"] = (d, d)
    if variant.uses_collaborative:
        cm_widths = [schema.user_width + schema.item_width] + list(network.collaborative_hidden) + [1]
        shapes.update(_mlp_shapes("cm", cm_widths))
    mlp_widths = [prediction_input_width(schema, variant)] + list(network.prediction_hidden) + [1]
    shapes.update(_mlp_shapes("mlp", mlp_widths))
    return shapes


def initial_parameters(
    schema: FeatureSchema,
    network: NetworkConfig,
    variant: ModelVariant,
    seed: int,
    init_range: float = 0.05,
) -> Dict[str, np.ndarray]:
    """Embeddings uniform in [-init_range, init_range], weights Glorot, biases 0."""
    params: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(schema, network, variant).items():
        if name.startswith("emb."):
            params[name] = uniform_init(seed, name, shape, init_range)
        elif len(shape) == 1:
            params[name] = zeros_init(shape)
        else:
            params[name] = xavier_init(seed, name, shape)
    return params


# ==============================================================================
# MODEL
# ==============================================================================

@dataclass
class CCNModel:
    """Parameters plus everything needed to rebuild the graphs around them."""

    schema: FeatureSchema
    hyper: HyperParams
    network: NetworkConfig
    variant: ModelVariant
    params: Dict[str, np.ndarray]
    seed: int = 0
    lineage: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def initialise(
        cls,
        schema: FeatureSchema,
        hyper: HyperParams,
        network: NetworkConfig,
        variant: ModelVariant,
        seed: int,
        lineage: Optional[Dict[str, Any]] = None,
    ) -> "CCNModel":
        params = initial_parameters(schema, network, variant, seed, hyper.init_range)
        logger.debug(f"Initialised {variant.value} model with {len(params)} parameter arrays")
        return cls(
            schema=schema,
            hyper=hyper,
            network=network,
            variant=ModelVariant(variant),
            params=params,
            seed=seed,
            lineage=dict(lineage or {"init_seed": seed}),
        )

    @property
    def tables(self) -> EmbeddingTables:
        return EmbeddingTables.from_params(self.schema, self.params)

    @property
    def cm_layers(self) -> int:
        return len(self.network.collaborative_hidden) + 1

    @property
    def mlp_layers(self) -> int:
        return len(self.network.prediction_hidden) + 1

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "CCNModel":
        return CCNModel(
            schema=self.schema,
            hyper=self.hyper,
            network=self.network,
            variant=self.variant,
            params={k: v.copy() for k, v in self.params.items()},
            seed=self.seed,
            lineage=dict(self.lineage),
        )


# ==============================================================================
# GRAPH BUILDERS
# ==============================================================================

@dataclass
class ForwardNodes:
    logits: Node
    probs: Node
    e_user: Node
    e_trigger: Node
    s_target: Optional[Node] = None


def build_forward(
    graph: Graph, model: CCNModel, batch: SampleBatch, xi: Optional[float] = None
) -> ForwardNodes:
    """Prediction path for a batch; touches no context arrays."""
    schema = model.schema
    xi = model.hyper.xi if xi is None else xi
    e_user = embed_users_node(graph, schema, batch.user_ids)
    e_target = embed_items_node(graph, batch.target_ids)
    e_trigger = embed_items_node(graph, batch.trigger_ids)
    h_tsi = build_tsi(
        graph,
        e_target,
        e_trigger,
        embed_items_node(graph, batch.short_ids),
        batch.short_mask,
        embed_items_node(graph, batch.long_ids),
        batch.long_target_mask,
        batch.long_trigger_mask,
        heads=model.hyper.heads,
        dim=schema.embedding_dim,
        use_trigger=model.variant.uses_tsi,
    )
    parts = [e_user, e_target, e_trigger, h_tsi]

    s_target = None
    if model.variant.uses_collaborative:
        s_target = build_collaborative_degree(
            graph, e_user, e_target, e_trigger,
            user_width=schema.user_width,
            n_layers=model.cm_layers,
            xi=xi,
        )
        parts.append(graph.slice(s_target, (slice(None), None)))

    x = graph.concat(parts, axis=-1)
    for i in range(model.mlp_layers - 1):
        x = graph.relu(graph.linear(x, graph.input(f"mlp.w{i}"), graph.input(f"mlp.b{i}")))
    last = model.mlp_layers - 1
    out = graph.linear(x, graph.input(f"mlp.w{last}"), graph.input(f"mlp.b{last}"))
    logits = graph.sum(out, axis=-1)
    return ForwardNodes(
        logits=logits,
        probs=graph.sigmoid(logits),
        e_user=e_user,
        e_trigger=e_trigger,
        s_target=s_target,
    )


@dataclass
class TrainingGraph:
    """Graph of the full objective with handles on every loss component."""

    graph: Graph
    forward: ForwardNodes
    ce: Node
    total: Node
    repulsion: Optional[Node] = None
    attraction: Optional[Node] = None
    attraction_weight: float = 0.0
    lam: float = 0.0


def build_training_graph(
    model: CCNModel,
    batch: SampleBatch,
    prior: Optional[PairPrior],
    hyper: Optional[HyperParams] = None,
    include_contrastive: Optional[bool] = None,
) -> TrainingGraph:
    """Build L = L_CE + lambda * (L_rep + (P-/P+) L_att) for one batch.

    Contrastive terms are built only for contrastive variants with
    lambda > 0, so lambda = 0 reproduces the cross-entropy graph exactly.

    Args:
        model: Model whose variant selects the active terms
        batch: Collated samples with context
        prior: Pair-label prior from the training split
        hyper: Hyperparameters (defaults to the model's)
        include_contrastive: Force the contrastive terms on or off

    Raises:
        VariantError: If contrastive terms are forced on a non-contrastive variant
    """
    hyper = hyper or model.hyper
    variant = model.variant
    if include_contrastive is None:
        include_contrastive = variant.is_contrastive and hyper.lam > 0
    elif include_contrastive and not variant.is_contrastive:
        raise VariantError(f"variant '{variant.value}' has no contrastive losses")

    graph = Graph()
    forward = build_forward(graph, model, batch, hyper.xi)
    y = batch.labels
    # binary cross-entropy from logits: y softplus(-z) + (1 - y) softplus(z)
    ce_terms = graph.add(
        graph.mul(graph.const(y), graph.softplus(graph.neg(forward.logits))),
        graph.mul(graph.const(1.0 - y), graph.softplus(forward.logits)),
    )
    ce = graph.mean(ce_terms)
    result = TrainingGraph(graph=graph, forward=forward, ce=ce, total=ce)

    if include_contrastive:
        if not batch.has_context:
            raise VariantError("contrastive losses need the in-page context")
        if variant.uses_attraction and prior is None:
            raise VariantError("attraction loss needs a pair-label prior")
        size = batch.size
        s_context = build_collaborative_degree(
            graph,
            forward.e_user,
            embed_items_node(graph, batch.context_ids),
            forward.e_trigger,
            user_width=model.schema.user_width,
            n_layers=model.cm_layers,
            xi=hyper.xi,
            per_context=True,
        )
        positive, negative = split_masks(batch.labels, batch.context_labels, batch.context_mask)
        contrastive = None
        if variant.uses_repulsion:
            per_sample = build_repulsion(graph, forward.s_target, s_context, negative, hyper.tau)
            result.repulsion = graph.scale(graph.sum(per_sample), 1.0 / size)
            contrastive = result.repulsion
        if variant.uses_attraction:
            per_sample = build_attraction(graph, forward.s_target, s_context, positive, hyper.xi)
            result.attraction = graph.scale(graph.sum(per_sample), 1.0 / size)
            result.attraction_weight = prior.attraction_weight
            weighted = graph.scale(result.attraction, prior.attraction_weight)
            contrastive = weighted if contrastive is None else graph.add(contrastive, weighted)
        result.lam = hyper.lam
        result.total = graph.add(ce, graph.scale(contrastive, hyper.lam))

    graph.set_root(result.total)
    return result


# ==============================================================================
# LOSSES
# ==============================================================================

@dataclass
class LossBreakdown:
    """Loss components of one evaluation of the objective."""

    ce: float
    repulsion: float
    attraction: float
    total: float
    attraction_weight: float = 0.0
    lam: float = 0.0

    def recombined(self) -> float:
        return self.ce + self.lam * (self.repulsion + self.attraction_weight * self.attraction)


def read_losses(training: TrainingGraph) -> LossBreakdown:
    """Component values after forward_eval of training.total."""

    def value(node: Optional[Node]) -> float:
        return 0.0 if node is None else float(node.value)

    return LossBreakdown(
        ce=value(training.ce),
        repulsion=value(training.repulsion),
        attraction=value(training.attraction),
        total=value(training.total),
        attraction_weight=training.attraction_weight,
        lam=training.lam,
    )


def total_loss(
    samples: Sequence[TrainingSample],
    model: CCNModel,
    hyper: Optional[HyperParams] = None,
    prior: Optional[PairPrior] = None,
) -> LossBreakdown:
    """Objective over one batch of samples (batch means)."""
    batch = collate_samples(samples, model.schema)
    training = build_training_graph(model, batch, prior, hyper)
    forward_eval(training.graph, model.params, training.total)
    return read_losses(training)


def contrastive_losses(
    samples: Sequence[TrainingSample],
    model: CCNModel,
    prior: PairPrior,
    hyper: Optional[HyperParams] = None,
) -> Tuple[float, float]:
    """(repulsion, attraction) batch means, whatever lambda is.

    Raises:
        VariantError: If the model's variant has no contrastive losses
    """
    batch = collate_samples(samples, model.schema)
    training = build_training_graph(model, batch, prior, hyper, include_contrastive=True)
    forward_eval(training.graph, model.params, training.total)
    losses = read_losses(training)
    return losses.repulsion, losses.attraction


# ==============================================================================
# INFERENCE
# ==============================================================================

Scorable = Union[TrainingSample, ScoringRequest]


def _as_requests(samples: Sequence[Scorable]) -> List[ScoringRequest]:
    return [s if isinstance(s, ScoringRequest) else ScoringRequest.from_sample(s) for s in samples]


def _evaluate_chunks(model: CCNModel, samples: Sequence[Scorable], pick) -> np.ndarray:
    requests = _as_requests(samples)
    out = []
    for start in range(0, len(requests), PREDICT_CHUNK):
        batch = collate_samples(requests[start:start + PREDICT_CHUNK], model.schema, with_context=False)
        graph = Graph()
        forward = build_forward(graph, model, batch)
        out.append(forward_eval(graph, model.params, pick(forward)))
    return np.concatenate(out) if out else np.zeros(0)


def predict_logits(model: CCNModel, samples: Sequence[Scorable]) -> np.ndarray:
    """Pre-sigmoid scores; context items are never read."""
    return _evaluate_chunks(model, samples, lambda f: f.logits)


def predict_batch(model: CCNModel, samples: Sequence[Scorable]) -> np.ndarray:
    """Click probabilities for many samples."""
    return _evaluate_chunks(model, samples, lambda f: f.probs)


def predict_ctr(user, trigger, target, sequences, model: CCNModel) -> float:
    """Click probability of one (user, trigger, target, sequences) request."""
    request = ScoringRequest(user=user, trigger=trigger, target=target, sequences=sequences)
    return float(predict_batch(model, [request])[0])


def collaborative_degrees(model: CCNModel, samples: Sequence[Scorable]) -> np.ndarray:
    """s_target per sample.

    Raises:
        VariantError: If the variant has no collaborative module
    """
    if not model.variant.uses_collaborative:
        raise VariantError(f"variant '{model.variant.value}' has no collaborative module")
    return _evaluate_chunks(model, samples, lambda f: f.s_target)
