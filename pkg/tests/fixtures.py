"""Hand-built engine fixtures shared by several test modules."""

from anonpads.balancer import BalancerConfig
from anonpads.engine import RunConfig
from anonpads.model import ModelConfig, SmhEntity

CLIQUE_MODEL = ModelConfig(n_entities=20, space_l=10000.0, radius=250.0, v_min=0.0, v_max=0.0)


def _still(eid, x, y):
    return SmhEntity(eid, x, y, x, y, 0.0)


def two_clique_config(enabled=True, n_steps=40, seed=1):
    """Two stationary cliques of ten; each LP starts with 7 of one and 3 of
    the other, so exactly six entities are hosted away from their clique.

    The split is deliberately lopsided: with 5/5 both halves would want to
    swap at the same evaluation and just trade places.
    """
    a = [_still(i, 1000.0 + 10 * i, 1000.0) for i in range(10)]
    b = [_still(10 + i, 6000.0 + 10 * i, 6000.0) for i in range(10)]
    assignment = {e.entity_id: (0 if i < 7 else 1) for i, e in enumerate(a)}
    assignment.update({e.entity_id: (1 if i < 7 else 0) for i, e in enumerate(b)})
    # cap of 3 per evaluation out of 10 local entities
    bal = BalancerConfig(enabled=enabled, window=5, eval_period=5, max_frac=0.3, cooldown=10)
    return RunConfig(seed=seed, n_steps=n_steps, model=CLIQUE_MODEL, balancer=bal,
                     entities=a + b, assignment=assignment)


CROSS_HOSTED = {7, 8, 9, 17, 18, 19}
