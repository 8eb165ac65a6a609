"""Model variants of the ablation grid."""

from enum import Enum


class ModelVariant(str, Enum):
    """Which feature blocks and loss terms a model uses.

    TAN_MINUS is the backbone without the collaborative module and without
    trigger-related sequence interactions; TAN adds both but trains on
    cross-entropy only; the CCN variants add the contrastive terms.
    """
    TAN_MINUS = "tan_minus"
    TAN = "tan"
    CCN_NO_TSI = "ccn_no_tsi"
    CCN_NO_ATTRACTION = "ccn_no_attraction"
    CCN_NO_REPULSION = "ccn_no_repulsion"
    CCN = "ccn"

    @property
    def uses_tsi(self) -> bool:
        return self not in (ModelVariant.TAN_MINUS, ModelVariant.CCN_NO_TSI)

    @property
    def uses_collaborative(self) -> bool:
        return self is not ModelVariant.TAN_MINUS

    @property
    def uses_repulsion(self) -> bool:
        return self in (
            ModelVariant.CCN,
            ModelVariant.CCN_NO_TSI,
            ModelVariant.CCN_NO_ATTRACTION,
        )

    @property
    def uses_attraction(self) -> bool:
        return self in (
            ModelVariant.CCN,
            ModelVariant.CCN_NO_TSI,
            ModelVariant.CCN_NO_REPULSION,
        )

    @property
    def is_contrastive(self) -> bool:
        return self.uses_repulsion or self.uses_attraction

    @property
    def display_name(self) -> str:
        return {
            ModelVariant.TAN_MINUS: "TAN (w/o CM & TSI)",
            ModelVariant.TAN: "TAN",
            ModelVariant.CCN_NO_TSI: "CCN (w/o TSI)",
            ModelVariant.CCN_NO_ATTRACTION: "CCN (w/o L+)",
            ModelVariant.CCN_NO_REPULSION: "CCN (w/o L-)",
            ModelVariant.CCN: "CCN",
        }[self]
