"""ojoin: a data-oblivious multi-way join engine with traced untrusted memory.

Every untrusted-memory access made by the engine is recorded in an access
trace, so obliviousness (identical traces across equal-size inputs),
worst-case output-size budgets, and cache complexity can all be checked
experimentally.
"""

__version__ = "0.1.0"
