from __future__ import annotations

from typing import Sequence

from src.core.exceptions import InputError
from src.nn.params import ParamVector
from src.optim.checkpoint import Checkpoint, Provenance
from src.optim.state import zeroed_state

__all__: list[str] = ["merged_checkpoint"]


def merged_checkpoint(
    parents: Sequence[Checkpoint], params: ParamVector, dataset_id: str = "merged"
) -> Checkpoint:
    """Wrap merged *params* in a checkpoint with a zeroed optimizer.

    Provenance lists each parent's parameter checksum; ``dataset_size`` is
    the parents' total N.
    """
    if not parents:
        raise InputError("a merged checkpoint needs at least one parent")
    first = parents[0]
    provenance = Provenance(
        dataset_id=dataset_id,
        dataset_size=sum(p.provenance.dataset_size for p in parents),
        batch_size=first.provenance.batch_size,
        steps=0,
        seed=first.provenance.seed,
        parent_checksums=tuple(p.params.checksum() for p in parents),
    )
    return Checkpoint(first.mlp_spec, params, zeroed_state(params), provenance)
