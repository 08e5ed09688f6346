from src.tensor.tape import Op, Tape, Tensor, backward, detach, get_op, record, register_op, unregister_op
from src.tensor import ops
from src.tensor.gradcheck import OP_CASES, analytic_gradients, finite_diff_check, op_case
