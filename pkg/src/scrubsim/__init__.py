"""scrubsim: a desk-scale synthetic instrument-handover pipeline.

Simulated tabletop scene + 6-DOF arm, synthetic perception with calibrated
error injection, mask-fusion feature encoding, a tokenized-action decoder
policy trained from scripted demonstrations, and an evaluation harness.
"""

__version__ = "0.1.0"
