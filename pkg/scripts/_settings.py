"""Shared desk-scale experiment settings for the runnable scripts.

These match the acceptance suite: a 4-symbol sensitive alphabet injected
one-hot into every stage, labels drawn from a noisy linear rule on the
public features only (so the task is solvable without the sensitive
symbols), and a compact pipeline that trains in well under a minute per run
on one core.
"""

DESK_TASK = {
    "d_pub": 8,
    "k_s": 4,
    "k_y": 4,
    "s_to_input": True,
    "s_to_label_weight": 0.0,
    "label_noise": 0.1,
    "samples_per_split": 8192,
    "seed": 7,
}

DESK_TRAIN = {
    "beta": 0.1,
    "eta_theta": 1e-3,
    "eta_psi": 5e-3,
    "batch": 128,
    "iterations": 1500,
    "critic_steps": 5,
    "d_repr": 12,
    "agent_hidden": 64,
    "agent_layers": 2,
    "critic_hidden": 128,
    "critic_layers": 2,
    "eval_every": 0,
}
