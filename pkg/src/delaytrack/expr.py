"""Safe, vectorised evaluation of scalar expressions in ``t``.

Grammar: numbers, ``t``, ``pi``, ``+ - * / ^ **``, parentheses, ``sin``,
``cos``, ``exp``, comparisons (for conditions only) and
``piecewise(cond1, value1, cond2, value2, ..., default)``.
"""

import ast

import numpy as np


class ExpressionError(ValueError):
    pass


_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": np.pi}
_CMP = {
    ast.Lt: np.less,
    ast.LtE: np.less_equal,
    ast.Gt: np.greater,
    ast.GtE: np.greater_equal,
}


def _normalise(text):
    # unicode minus / multiplication signs show up in copied formulas
    return text.replace("−", "-").replace("×", "*").replace("^", "**").strip()


class Expression:
    """Compiled expression; call with a scalar or array of times."""

    def __init__(self, text):
        self.text = str(text)
        try:
            tree = ast.parse(_normalise(self.text), mode="eval")
        except SyntaxError as exc:
            raise ExpressionError(f"cannot parse {self.text!r}: {exc.msg}") from None
        self._breaks = set()
        self._uses_t = False
        self._check(tree.body, in_condition=False)
        self._tree = tree.body

    @property
    def breakpoints(self):
        """Constants compared against ``t`` inside conditions, sorted."""
        return sorted(self._breaks)

    @property
    def is_constant(self):
        return not self._uses_t

    def _check(self, node, in_condition):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExpressionError(f"unsupported literal {node.value!r} in {self.text!r}")
        elif isinstance(node, ast.Name):
            if node.id == "t":
                self._uses_t = True
            elif node.id not in _CONSTS:
                raise ExpressionError(f"unknown name {node.id!r} in {self.text!r}")
        elif isinstance(node, ast.BinOp):
            if not isinstance(node.op, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)):
                raise ExpressionError(f"unsupported operator in {self.text!r}")
            self._check(node.left, in_condition)
            self._check(node.right, in_condition)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExpressionError(f"unsupported unary operator in {self.text!r}")
            self._check(node.operand, in_condition)
        elif isinstance(node, ast.Compare):
            if not in_condition:
                raise ExpressionError(f"comparison outside piecewise condition in {self.text!r}")
            operands = [node.left, *node.comparators]
            for op in node.ops:
                if type(op) not in _CMP:
                    raise ExpressionError(f"unsupported comparison in {self.text!r}")
            for a, b in zip(operands, operands[1:]):
                for x, y in ((a, b), (b, a)):
                    if isinstance(x, ast.Name) and x.id == "t":
                        try:
                            self._breaks.add(float(_eval(y, 0.0)))
                        except ExpressionError:
                            pass
            for sub in operands:
                self._check(sub, in_condition=False)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.keywords:
                raise ExpressionError(f"unsupported call in {self.text!r}")
            name = node.func.id
            if name == "piecewise":
                args = node.args
                if len(args) < 3 or len(args) % 2 == 0:
                    raise ExpressionError(
                        f"piecewise needs (cond, value)* pairs and a default in {self.text!r}"
                    )
                for i, arg in enumerate(args):
                    is_cond = i % 2 == 0 and i < len(args) - 1
                    self._check(arg, in_condition=is_cond)
            elif name in _FUNCS:
                if len(node.args) != 1:
                    raise ExpressionError(f"{name} takes one argument in {self.text!r}")
                self._check(node.args[0], in_condition)
            else:
                raise ExpressionError(f"unknown function {name!r} in {self.text!r}")
        else:
            raise ExpressionError(f"unsupported syntax {type(node).__name__} in {self.text!r}")

    def __call__(self, t):
        t_arr = np.asarray(t, dtype=np.float64)
        with np.errstate(all="ignore"):
            out = np.asarray(_eval(self._tree, t_arr), dtype=np.float64)
        out = np.broadcast_to(out, t_arr.shape).copy() if out.shape != t_arr.shape else out
        return out if t_arr.ndim else float(out)

    def __repr__(self):
        return f"Expression({self.text!r})"


def _eval(node, t):
    if isinstance(node, ast.Constant):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "t":
            return t
        if node.id in _CONSTS:
            return _CONSTS[node.id]
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.BinOp):
        a, b = _eval(node.left, t), _eval(node.right, t)
        op = node.op
        if isinstance(op, ast.Add):
            return a + b
        if isinstance(op, ast.Sub):
            return a - b
        if isinstance(op, ast.Mult):
            return a * b
        if isinstance(op, ast.Div):
            return np.divide(a, b)
        return np.power(a, b)
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, t)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Compare):
        operands = [_eval(x, t) for x in (node.left, *node.comparators)]
        result = True
        for op, a, b in zip(node.ops, operands, operands[1:]):
            result = np.logical_and(result, _CMP[type(op)](a, b))
        return result
    if isinstance(node, ast.Call):
        name = node.func.id
        if name == "piecewise":
            args = node.args
            conds = [np.broadcast_to(_eval(c, t), np.shape(t)) for c in args[:-1:2]]
            vals = [np.broadcast_to(_eval(v, t), np.shape(t)) for v in args[1:-1:2]]
            default = np.broadcast_to(_eval(args[-1], t), np.shape(t))
            return np.select(conds, vals, default)
        return _FUNCS[name](_eval(node.args[0], t))
    raise ExpressionError(f"unsupported syntax {type(node).__name__}")


def compile_entry(value, where="expression"):
    """Number or expression string -> Expression (numbers become constants)."""
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ExpressionError(f"{where}: expected a number or expression string, got {value!r}")
    try:
        return Expression(repr(float(value)) if not isinstance(value, str) else value)
    except ExpressionError as exc:
        raise ExpressionError(f"{where}: {exc}") from None
