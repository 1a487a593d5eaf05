"""Multi-agent bandit cache learners and the name-based factory."""
from .keys import (
    JointActionTable,
    KeyScore,
    agent_sbs_table,
    agent_user_table,
    distributed_table,
    edge_table,
    initial_schedule,
    perturbed_term,
    perturbed_terms,
)
from .mamab import BoundViolation, MAMABLearner, ModifiedMAMABLearner


def parse_learner_name(name: str):
    """Map a config name such as ``edge_v2`` to (modified, decomposition, variant)."""
    modified = name.startswith("modified_")
    base = name[len("modified_"):] if modified else name
    variant = "ucb_v2" if modified else "ucb_v1"
    if base.endswith("_v2") and not modified:
        base, variant = base[:-3], "ucb_v2"
    elif base.endswith("_eps"):
        base, variant = base[:-4], "epsilon_greedy"
    return modified, base, variant


def make_learner(name, net, num_files, cache_size, **kw):
    modified, decomposition, variant = parse_learner_name(name)
    cls = ModifiedMAMABLearner if modified else MAMABLearner
    return cls(net, num_files, cache_size, decomposition, variant, **kw)


__all__ = [
    "BoundViolation", "JointActionTable", "KeyScore", "MAMABLearner", "ModifiedMAMABLearner",
    "agent_sbs_table", "agent_user_table", "distributed_table", "edge_table",
    "initial_schedule", "make_learner", "parse_learner_name", "perturbed_term", "perturbed_terms",
]
