"""Geometry spec files: a sectioned key = value text format with expression values.

Example::

    [problem]
    name = toy_rotation
    chart = R2

    [chart R2]
    coords = x, y
    box = -1.5 1.5; -1.5 1.5

    [metric]
    g.0.0 = 1
    g.1.1 = 1

    [bundle]
    frame.0 = -y; x

Missing components are zero.  Export is deterministic, and exporting a
parsed export reproduces it byte for byte.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import sympy as sp

from . import expr as ex
from .bundle import BundleError, build_bundle
from .calculus import ChartTransition, DifferentialForm, MetricField, VectorField
from .expr import Chart
from .gauge import EUCLIDEAN, LORENTZIAN, ConnectionData, GaugingProblem

HEADER = "# strictgauge geometry spec, format 1"
LATTICE_KEYS = {
    "n_sigma": int, "n_tau": int, "length_sigma": float, "length_tau": float,
    "low": float, "high": float, "stiffness": float, "trials": int, "steps": int, "tol": float,
}
SECTIONS = ("problem", "chart", "transition", "metric", "B", "H", "bundle", "lift", "connection",
            "primitive", "lattice")


class SpecError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class GeometrySpec:
    name: str
    problem: GaugingProblem
    charts: dict
    transitions: dict = field(default_factory=dict)
    transversal: object = None
    primitive: DifferentialForm | None = None
    lattice: dict | None = None
    source_hash: str = ""


# ---------------------------------------------------------------------------
# reading


def _sections(text):
    """[(name, args, {key: (value, line)}, header_line)] in file order."""
    out = []
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise SpecError("unterminated section header", no)
            words = line[1:-1].split()
            if not words or words[0] not in SECTIONS:
                raise SpecError(f"unknown section {line}", no)
            current = (words[0], tuple(words[1:]), {}, no)
            out.append(current)
            continue
        if current is None:
            raise SpecError("key outside of any section", no)
        key, eq, value = line.partition("=")
        key = key.strip()
        if not eq or not key:
            raise SpecError("expected 'key = value'", no)
        if key in current[2]:
            raise SpecError(f"duplicate key {key!r}", no)
        current[2][key] = (value.strip(), no)
    return out


def _one(sections, name, required=True):
    found = [s for s in sections if s[0] == name]
    if len(found) > 1:
        raise SpecError(f"section [{name}] appears twice", found[1][3])
    if not found:
        if required:
            raise SpecError(f"missing section [{name}]")
        return None
    return found[0]


def _expr(value, chart, line):
    try:
        return ex.parse_expr(value, chart)
    except ex.ParseError as err:
        raise SpecError(f"bad expression {value!r}: {err}", line) from None


def _list(value, chart, line):
    return [_expr(v.strip(), chart, line) for v in value.split(";")]


def _indices(key, prefix, count, line):
    parts = key.split(".")
    if parts[0] != prefix or len(parts) != count + 1:
        raise SpecError(f"expected key {prefix}" + ".i" * count + f", got {key!r}", line)
    try:
        return tuple(int(p) for p in parts[1:])
    except ValueError:
        raise SpecError(f"non-integer index in {key!r}", line) from None


def _parse_chart(sec):
    name, args, kv, no = sec
    if len(args) != 1:
        raise SpecError("chart section needs exactly one name", no)
    if "coords" not in kv:
        raise SpecError("chart needs coords", no)
    coords = [c.strip() for c in kv["coords"][0].split(",") if c.strip()]
    params = [c.strip() for c in kv.get("params", ("", 0))[0].split(",") if c.strip()]
    box = None
    if "box" in kv:
        value, line = kv["box"]
        try:
            box = tuple(tuple(float(v) for v in part.split()) for part in value.split(";"))
        except ValueError:
            raise SpecError("box entries must be numbers", line) from None
        if len(box) != len(coords) or any(len(b) != 2 for b in box):
            raise SpecError("box needs one 'lo hi' pair per coordinate", line)
    try:
        ch = Chart(args[0], coords, params=params, box=box)
    except ValueError as err:
        raise SpecError(str(err), no) from None
    for key, (value, line) in kv.items():
        if key.startswith("derived."):
            ch.derived[key.split(".", 1)[1]] = _expr(value, ch, line)
    if "singular" in kv:
        value, line = kv["singular"]
        ch.singular = tuple(_expr(v.strip(), ch, line) for v in value.split(";"))
    unknown = [k for k in kv if k not in ("coords", "params", "box", "singular") and not k.startswith("derived.")]
    if unknown:
        raise SpecError(f"unknown chart key {unknown[0]!r}", kv[unknown[0]][1])
    return ch


def _parse_form(sec, chart, degree):
    comps = {}
    for key, (value, line) in sec[2].items():
        idx = _indices(key, "c", degree, line)
        if any(i >= chart.dim for i in idx):
            raise SpecError(f"index out of range in {key!r}", line)
        if list(idx) != sorted(set(idx)):
            raise SpecError(f"form indices must be strictly increasing in {key!r}", line)
        comps[idx] = _expr(value, chart, line)
    return DifferentialForm(chart, degree, comps)


def parse_spec(text):
    """Parse spec text into a GeometrySpec; raises SpecError on malformed input."""
    secs = _sections(text)
    prob = _one(secs, "problem")[2]
    charts = {}
    for sec in secs:
        if sec[0] == "chart":
            ch = _parse_chart(sec)
            if ch.name in charts:
                raise SpecError(f"chart {ch.name} defined twice", sec[3])
            charts[ch.name] = ch
    if "chart" not in prob:
        raise SpecError("[problem] needs chart")
    cname, cline = prob["chart"]
    if cname not in charts:
        raise SpecError(f"unknown chart {cname!r}", cline)
    chart = charts[cname]

    transitions = {}
    for sec in secs:
        if sec[0] != "transition":
            continue
        _, args, kv, no = sec
        if len(args) != 2 or any(a not in charts for a in args):
            raise SpecError("transition needs two known chart names", no)
        src, tgt = charts[args[0]], charts[args[1]]
        fwd = {c: _expr(kv[c][0], tgt, kv[c][1]) for c in src.coords if c in kv}
        inv = {c: _expr(kv["inverse." + c][0], src, kv["inverse." + c][1])
               for c in tgt.coords if "inverse." + c in kv}
        if len(fwd) != src.dim or len(inv) != tgt.dim:
            raise SpecError("transition needs every coordinate and its inverse", no)
        domain = ()
        if "domain" in kv:
            domain = tuple(_list(kv["domain"][0], tgt, kv["domain"][1]))
        transitions[(src.name, tgt.name)] = ChartTransition(src, tgt, fwd, inv, domain)

    msec = _one(secs, "metric")
    n = chart.dim
    G = sp.zeros(n, n)
    signature = "riemannian"
    for key, (value, line) in msec[2].items():
        if key == "signature":
            signature = value
            continue
        i, j = _indices(key, "g", 2, line)
        if i > j or j >= n:
            raise SpecError(f"metric keys are upper-triangular g.i.j with i <= j < {n}", line)
        G[i, j] = G[j, i] = _expr(value, chart, line)
    try:
        metric = MetricField(chart, G, signature)
    except ValueError as err:
        raise SpecError(str(err), msec[3]) from None

    bsec = _one(secs, "B", required=False)
    hsec = _one(secs, "H", required=False)
    B = _parse_form(bsec, chart, 2) if bsec else None
    H = _parse_form(hsec, chart, 3) if hsec else None

    bun = _one(secs, "bundle")[2]
    frames = sorted((_indices(k, "frame", 1, ln)[0], v, ln) for k, (v, ln) in bun.items() if k.startswith("frame."))
    r = len(frames)
    if [f[0] for f in frames] != list(range(r)) or r == 0:
        raise SpecError("bundle frame keys must be frame.0 .. frame.(r-1)")
    frame = []
    for _, value, line in frames:
        comps = _list(value, chart, line)
        if len(comps) != n:
            raise SpecError(f"frame vector needs {n} components", line)
        frame.append(VectorField(chart, comps))
    structure = [[[0] * r for _ in range(r)] for _ in range(r)]
    kernel = {}
    for key, (value, line) in bun.items():
        if key.startswith("C."):
            c, a, b = _indices(key, "C", 3, line)
            if max(c, a, b) >= r:
                raise SpecError(f"index out of range in {key!r}", line)
            structure[c][a][b] = _expr(value, chart, line)
        elif key.startswith("kernel."):
            (I,) = _indices(key, "kernel", 1, line)
            kernel[I] = _list(value, chart, line)
            if len(kernel[I]) != r:
                raise SpecError(f"kernel generator needs {r} entries", line)
        elif not key.startswith("frame."):
            raise SpecError(f"unknown bundle key {key!r}", line)
    if sorted(kernel) != list(range(len(kernel))):
        raise SpecError("kernel keys must be kernel.0 .. kernel.(s-1)")
    try:
        bundle = build_bundle(chart, frame, structure, [kernel[I] for I in sorted(kernel)])
    except BundleError as err:
        raise SpecError(f"bundle: {err}") from None

    alphas = None
    lsec = _one(secs, "lift", required=False)
    if lsec:
        rows = {}
        for key, (value, line) in lsec[2].items():
            (a,) = _indices(key, "alpha", 1, line)
            rows[a] = _list(value, chart, line)
            if len(rows[a]) != n:
                raise SpecError(f"lift 1-form needs {n} components", line)
        if sorted(rows) != list(range(r)):
            raise SpecError(f"lift needs alpha.0 .. alpha.{r - 1}", lsec[3])
        alphas = [DifferentialForm.one_form(chart, rows[a]) for a in range(r)]

    conn = None
    csec = _one(secs, "connection", required=False)
    if csec:
        conn = ConnectionData.zero(r, n)
        for key, (value, line) in csec[2].items():
            which = key.split(".")[0]
            if which not in ("omega", "phi"):
                raise SpecError(f"unknown connection key {key!r}", line)
            a, b, i = _indices(key, which, 3, line)
            if a >= r or b >= r or i >= n:
                raise SpecError(f"index out of range in {key!r}", line)
            getattr(conn, which)[a][b][i] = _expr(value, chart, line)

    sign_text = prob.get("sign", ("euclidean", 0))[0]
    if sign_text not in ("euclidean", "lorentzian"):
        raise SpecError(f"sign must be euclidean or lorentzian, got {sign_text!r}", prob["sign"][1])
    name = prob.get("name", ("", 0))[0]
    try:
        p = GaugingProblem(chart, metric, bundle, B=B, H=H, alphas=alphas, connection=conn,
                           sign=EUCLIDEAN if sign_text == "euclidean" else LORENTZIAN, name=name)
    except ValueError as err:
        raise SpecError(str(err)) from None

    transversal = None
    if "transversal" in prob:
        transversal = _expr(prob["transversal"][0], chart, prob["transversal"][1])
    psec = _one(secs, "primitive", required=False)
    primitive = _parse_form(psec, chart, 2) if psec else None

    lattice = None
    latsec = _one(secs, "lattice", required=False)
    if latsec:
        lattice = {}
        for key, (value, line) in latsec[2].items():
            if key not in LATTICE_KEYS:
                raise SpecError(f"unknown lattice key {key!r}", line)
            try:
                lattice[key] = LATTICE_KEYS[key](value)
            except ValueError:
                raise SpecError(f"lattice {key} must be a number", line) from None
    unknown = [k for k in prob if k not in ("name", "chart", "sign", "transversal")]
    if unknown:
        raise SpecError(f"unknown problem key {unknown[0]!r}", prob[unknown[0]][1])
    digest = hashlib.sha256(text.encode()).hexdigest()
    return GeometrySpec(name, p, charts, transitions, transversal, primitive, lattice, digest)


def read_spec(path):
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read())


# ---------------------------------------------------------------------------
# writing


def _t(e, chart):
    return ex.stable_text(sp.sympify(e), chart)


def _form_lines(form):
    return [f"c.{'.'.join(map(str, k))} = {_t(v, form.chart)}" for k, v in sorted(form.comps.items()) if v != 0]


def _num(v):
    return str(v) if isinstance(v, int) else repr(float(v))


def export_spec(spec):
    """Render a GeometrySpec as text (deterministic)."""
    p = spec.problem
    chart = p.chart
    out = [HEADER, "", "[problem]"]
    if spec.name:
        out.append(f"name = {spec.name}")
    out.append(f"chart = {chart.name}")
    out.append(f"sign = {'euclidean' if p.sign == EUCLIDEAN else 'lorentzian'}")
    if spec.transversal is not None:
        out.append(f"transversal = {_t(spec.transversal, chart)}")
    for ch in sorted(spec.charts.values(), key=lambda c: (c.name != chart.name, c.name)):
        if ch.opaque:
            raise ValueError(f"chart {ch.name} uses opaque functions, which have no text form")
        out += ["", f"[chart {ch.name}]", f"coords = {', '.join(ch.coords)}"]
        if ch.params:
            out.append(f"params = {', '.join(ch.params)}")
        out.append("box = " + "; ".join(f"{_num(lo)} {_num(hi)}" for lo, hi in ch.box))
        for k in sorted(ch.derived):
            out.append(f"derived.{k} = {_t(ch.derived[k], ch)}")
        if ch.singular:
            out.append("singular = " + "; ".join(_t(s, ch) for s in ch.singular))
    for (src, tgt), tr in sorted(spec.transitions.items()):
        out += ["", f"[transition {src} {tgt}]"]
        out += [f"{c} = {_t(v, tr.target)}" for c, v in zip(tr.source.coords, tr.fwd)]
        out += [f"inverse.{c} = {_t(v, tr.source)}" for c, v in zip(tr.target.coords, tr.inv)]
        if tr.domain:
            out.append("domain = " + "; ".join(_t(d, tr.target) for d in tr.domain))
    out += ["", "[metric]"]
    if p.metric.signature != "riemannian":
        out.append(f"signature = {p.metric.signature}")
    G = p.metric.matrix
    for i in range(chart.dim):
        for j in range(i, chart.dim):
            if G[i, j] != 0:
                out.append(f"g.{i}.{j} = {_t(G[i, j], chart)}")
    if p.B is not None and p.B.comps and any(v != 0 for v in p.B.comps.values()):
        out += ["", "[B]"] + _form_lines(p.B)
    elif p.H is not None and any(v != 0 for v in p.H.comps.values()):
        out += ["", "[H]"] + _form_lines(p.H)
    out += ["", "[bundle]"]
    for a, v in enumerate(p.frame):
        out.append(f"frame.{a} = " + "; ".join(_t(c, chart) for c in v.comps))
    r = p.rank
    for c in range(r):
        for a in range(r):
            for b in range(r):
                val = p.bundle.structure[c][a][b]
                if val != 0:
                    out.append(f"C.{c}.{a}.{b} = {_t(val, chart)}")
    for I, row in enumerate(p.bundle.kernel):
        out.append(f"kernel.{I} = " + "; ".join(_t(t, chart) for t in row))
    if not p.minimal:
        out += ["", "[lift]"]
        for a, al in enumerate(p.alphas):
            out.append(f"alpha.{a} = " + "; ".join(_t(c, chart) for c in al.as_list()))
    if not p.connection.is_zero():
        out += ["", "[connection]"]
        for which in ("omega", "phi"):
            arr = getattr(p.connection, which)
            for a in range(r):
                for b in range(r):
                    for i in range(chart.dim):
                        if arr[a][b][i] != 0:
                            out.append(f"{which}.{a}.{b}.{i} = {_t(arr[a][b][i], chart)}")
    if spec.primitive is not None:
        out += ["", "[primitive]"] + _form_lines(spec.primitive)
    if spec.lattice:
        out += ["", "[lattice]"]
        for k in LATTICE_KEYS:
            if k in spec.lattice:
                out.append(f"{k} = {_num(spec.lattice[k])}")
    return "\n".join(out) + "\n"


DEFAULT_LATTICE = {"n_sigma": 16, "n_tau": 16, "low": 1.0, "high": 1.5, "stiffness": 100.0,
                   "trials": 2, "steps": 4000, "tol": 1e-8}


def spec_from_entry(entry, lattice=None):
    """Wrap a catalog entry as a GeometrySpec (with the entry's rotation-invariant primitive if it has one)."""
    p = entry.problem
    charts = dict(entry.charts) or {p.chart.name: p.chart}
    charts.setdefault(p.chart.name, p.chart)
    transitions = {}
    for tr in entry.transitions.values():
        transitions[(tr.source.name, tr.target.name)] = tr
    primitive = entry.extras.get("B_inv")
    if primitive is not None and primitive.chart is not p.chart:
        primitive = None
    return GeometrySpec(entry.name, p, charts, transitions, entry.transversal, primitive,
                        dict(lattice) if lattice else None)
