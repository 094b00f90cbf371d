"""Footstep-conditioned walking on a reduced-order 3D walker.

Subpackages cover the simulator (sim), dense-network numerics (nn), the
recurrent walking policy (policy), PPO training (rollout, ppo), learned
step-error prediction (reachability), stepping-stone benchmarks (benchmark),
and the command-line front end (cli).
"""

__version__ = "0.1.0"
