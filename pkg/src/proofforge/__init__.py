"""Expert-learning pipeline for formal theorem proving in Isabelle.

Submodules:

* ``corpus``: problem records, JSONL persistence, trigram leakage filtering
* ``prompts``: role templates, prompt rendering, completion parsing
* ``genclient``: sample/score wire clients and the in-process mock
* ``resampler``: reward-weighted self-normalized importance resampling
* ``curator``: training dataset assembly, length filtering, manifests
* ``verifier``: validity gates, outer-syntax checks, prover dispatch
* ``orchestrator``: the full loop, benchmark evaluation, metrics, CLI
"""

__version__ = "0.1.0"
