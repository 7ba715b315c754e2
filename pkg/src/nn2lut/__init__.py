"""nn2lut: compile small quantized MLPs into bit-exact K-input LUT netlists.

Pipeline: train a fanin-constrained quantized network, enumerate each
neuron's truth table, minimize it to a two-level cover, map the covers onto
LUTs, emit structural Verilog, and certify logic/network equivalence.
"""

__version__ = "0.1.0"
