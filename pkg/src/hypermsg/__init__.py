"""Hypernetwork message passing with first-message damping.

Modules: ``codes`` (parity-check matrices), ``channel`` (BPSK/AWGN),
``tanner`` (edge tables), ``autodiff`` (reverse-mode tape, Adam), ``bp``
(belief propagation), ``hyperdec`` (hypernetwork decoder), ``training``,
``gnn`` (GIN and hyper-GIN) and ``harness`` (BER sweeps, comparisons,
gradient checks).
"""
__version__ = "0.1.0"
