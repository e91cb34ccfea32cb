"""Interleaved imitation/reinforcement fine-tuning on toy MDPs.

Subpackages:
    nnkit       dense MLP core, flat params, hand-written backprop
    envs        seedable gridworld / point-mass MDPs with expert oracles
    il          behavior-cloning loss and pretraining
    rl          on-policy rollouts, GAE, clipped-surrogate gradient
    interleave  the 1:m interleaving engine with gradient separation
    theory      quadratic testbed verifying the step-size/ratio analysis
    cli         command-line harness (gen-demos, pretrain, finetune, ...)
"""

__version__ = "0.1.0"
