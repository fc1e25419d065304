"""Verilog-A text generation for a learned CTRNN.

The realized (rescaled) ``A`` is baked in as plain constants. Each state is
an internal node whose KCL equation reads ``TSCALE * ddt(V(s)) = f``, so the
module runs in physical time while the network keeps its rescaled time axis.
Port voltages are normalized and output currents de-normalized inline.
"""

from __future__ import annotations

import logging
import re

import numpy as np

from .data import Normalization
from .model import CtrnnParams, realize
from .stability import certify

log = logging.getLogger(__name__)

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def fmt(x: float) -> str:
    """17 significant digits, which round-trips every double."""
    return "%.17g" % float(x)


def _affine(coeffs, names) -> str:
    return " + ".join(f"({fmt(c)})*{n}" for c, n in zip(coeffs, names))


def emit_veriloga(params: CtrnnParams, module_name: str = "ctrnn", norm: Normalization | None = None,
                  time_scale: float = 1.0) -> str:
    """Verilog-A module for ``params``.

    With as many outputs as inputs the module has one pin per port: the pin
    voltage is the input and the output is the current drawn into the pin.
    Otherwise inputs ``u*`` are sensed and currents are driven into ``y*``.
    """
    if not _IDENT.match(module_name):
        raise ValueError(f"invalid module name {module_name!r}")
    if not time_scale > 0:
        raise ValueError("time_scale must be positive")
    rep = certify(params)
    if not rep.satisfied:
        log.warning("exporting a model whose stability certificate does not hold")
    norm = norm or Normalization.identity(params.m, params.p)
    r = realize(params)
    n, l, m, p = params.n, params.hidden, params.m, params.p
    shared = m == p
    in_pins = [f"p{k}" for k in range(m)] if shared else [f"u{k}" for k in range(m)]
    out_pins = in_pins if shared else [f"y{k}" for k in range(p)]
    pins = in_pins if shared else in_pins + out_pins
    states = [f"V(s{j})" for j in range(n)]

    L = []
    L.append(f"// {module_name}: CTRNN behavioral model (generated)")
    L.append(f"// dims n={n} l={l} m={m} p={p}; nonlinearity {params.kind}")
    L.append(f"// certificate: {'satisfied' if rep.satisfied else 'NOT satisfied'}"
             f" (margin {fmt(rep.lds_margin)}, rho {fmt(rep.rho)})")
    L.append('`include "constants.vams"')
    L.append('`include "disciplines.vams"')
    L.append("")
    L.append(f"module {module_name}({', '.join(pins)});")
    L.append(f"  inout {', '.join(pins)};")
    L.append(f"  electrical {', '.join(pins)};")
    L.append(f"  electrical {', '.join(f's{j}' for j in range(n))};")
    L.append(f"  parameter real TSCALE = {fmt(time_scale)};")
    L.append(f"  parameter real TAU = {fmt(r.tau)};")
    L.append("  real " + ", ".join([f"un{k}" for k in range(m)] + [f"z{i}" for i in range(l)]
                                   + [f"h{i}" for i in range(l)] + [f"yn{k}" for k in range(p)]) + ";")
    L.append("")
    L.append("  analog begin")
    for k, rec in enumerate(norm.u):
        if rec.constant:
            L.append(f"    un{k} = 0.0;")
        else:
            L.append(f"    un{k} = {fmt(2.0 / (rec.hi - rec.lo))}*(V({in_pins[k]}) - ({fmt(rec.lo)})) - 1.0;")
    un = [f"un{k}" for k in range(m)]
    for i in range(l):
        L.append(f"    z{i} = {_affine(r.A[i], states)} + {_affine(params.B[i], un)} + ({fmt(params.mu[i])});")
    for i in range(l):
        act = f"max(z{i}, 0.0)" if params.kind == "relu" else f"tanh(z{i})"
        L.append(f"    h{i} = {act};")
    hs = [f"h{i}" for i in range(l)]
    for j in range(n):
        L.append(f"    I(s{j}) <+ TSCALE*ddt(V(s{j})) - (-V(s{j})/TAU + {_affine(params.W[j], hs)}"
                 f" + ({fmt(params.nu[j])}));")
    for k in range(p):
        L.append(f"    yn{k} = {_affine(params.H[k], states)} + ({fmt(params.b[k])});")
    for k, rec in enumerate(norm.y):
        if rec.constant:
            L.append(f"    I({out_pins[k]}) <+ {fmt(rec.lo)};")
        else:
            L.append(f"    I({out_pins[k]}) <+ (yn{k} + 1.0)*{fmt(0.5 * (rec.hi - rec.lo))} + ({fmt(rec.lo)});")
    L.append("  end")
    L.append("endmodule")
    return "\n".join(L) + "\n"


_TERM = re.compile(r"\(([^()]+)\)\*V\(s(\d+)\)")


def parse_baked_A(text: str, n: int, l: int) -> np.ndarray:
    """Recover the state coefficients of the pre-activations from emitted text."""
    A = np.zeros((l, n))
    for line in text.splitlines():
        mt = re.match(r"\s*z(\d+) = (.*);$", line)
        if mt:
            i = int(mt.group(1))
            for c, j in _TERM.findall(mt.group(2)):
                A[i, int(j)] = float(c)
    return A


def write_veriloga(path, params: CtrnnParams, module_name: str = "ctrnn", norm: Normalization | None = None,
                   time_scale: float = 1.0) -> str:
    text = emit_veriloga(params, module_name, norm, time_scale)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return text


__all__ = ["emit_veriloga", "write_veriloga", "parse_baked_A", "fmt"]
