"""Command-line front door.

Subcommands: dim, scheme, basis, verify, gradcheck, signal-gen, train,
compare, separation.  Exit codes: 0 success, 1 verification failure, 2 usage
error.  Every randomized subcommand takes --seed and defaults to 0.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import dss, equimap, permgroup, train
from .backend import BACKEND
from .tensor import grad_check, softmax_xent

VERIFY_THRESHOLD = 1e-10


def _load_group(text: str) -> permgroup.GeneratorSet:
    if text.lstrip().startswith("{"):
        return permgroup.GeneratorSet.from_json(text)
    return permgroup.parse_groupspec(text)


# ---------------------------------------------------------------- subcommands

def cmd_dim(args) -> int:
    gens = _load_group(args.group)
    orbits = permgroup.pair_orbits(gens)
    print(f"E = {orbits.orbit_count}  (orbit BFS, degree {gens.degree})")
    try:
        elements = permgroup.closure(gens, cap=args.cap)
    except permgroup.GroupError as exc:
        print(f"trace formula skipped: {exc}")
        return 0
    e_trace = permgroup.dim_trace(elements)
    print(f"E = {e_trace}  (trace formula over |G| = {len(elements)})")
    if e_trace != orbits.orbit_count:
        print("MISMATCH between orbit count and trace formula", file=sys.stderr)
        return 1
    return 0


def cmd_scheme(args) -> int:
    gens = _load_group(args.group)
    image = equimap.render_scheme(permgroup.pair_orbits(gens))
    equimap.write_ppm(image, args.out)
    print(f"wrote {args.out}: {image.width}x{image.height}, "
          f"{image.distinct_colors()} parameters")
    return 0


def cmd_basis(args) -> int:
    gens = _load_group(args.group)
    basis = equimap.basis_from_partition(permgroup.pair_orbits(gens))
    with open(args.out, "w") as fh:
        fh.write(basis.to_json())
    print(f"wrote {args.out}: {len(basis)} basis matrices of degree {basis.degree}")
    return 0


def cmd_verify(args) -> int:
    gens = _load_group(args.group)
    partition = permgroup.pair_orbits(gens)
    basis = equimap.basis_from_partition(partition)
    worst = 0.0
    for B in basis.matrices:
        if not equimap.commutes_exactly(B, gens):
            print("FAIL: basis matrix does not commute with a generator")
            return 1
    rng = np.random.default_rng(args.seed)
    for _ in range(args.trials):
        L = basis.combine(rng.standard_normal(len(basis)))
        worst = max(worst, equimap.check_equivariance(L, gens, trials=5, seed=args.seed))
    print(f"max equivariance residual over {args.trials} random layers: {worst:.3e}")
    if worst >= VERIFY_THRESHOLD:
        print(f"FAIL: residual above {VERIFY_THRESHOLD:.0e}")
        return 1
    print("OK")
    return 0


def cmd_gradcheck(args) -> int:
    with open(args.model) as fh:
        config = dss.ModelConfig.from_json(fh.read())
    model = dss.Model(config, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    f0 = config.layers[0].in_features if config.layers else 1
    X = rng.standard_normal((2, config.n, f0, config.d))

    def loss():
        out = model(X)
        if config.head["type"] == "invariant":
            labels = np.arange(2) % config.head["classes"]
            return softmax_xent(out, labels)
        return (out * out).sum()

    err = grad_check(loss, model.store, eps=args.eps, samples=args.samples,
                     seed=args.seed)
    print(f"max relative gradient error: {err:.3e}")
    if err > 1e-4:
        print("FAIL: above 1e-4")
        return 1
    print("OK")
    return 0


def cmd_signal_gen(args) -> int:
    spec = train.DatasetSpec(
        args.train_count, args.val_count, args.test_count,
        n=args.n, T=args.T, sigma_mult=args.sigma, seed=args.seed,
    )
    tr, va, te = train.gen_signal_dataset(spec)
    for name, ds in (("train", tr), ("val", va), ("test", te)):
        path = f"{args.out}.{name}.bin"
        train.save_dataset(ds, path)
        print(f"wrote {path}: {len(ds)} samples of {ds.measurements.shape[1]}x"
              f"{ds.measurements.shape[2]}")
    return 0


def cmd_train(args) -> int:
    spec = train.DatasetSpec(
        args.train_count, args.val_count, args.test_count,
        n=args.n, T=args.T, sigma_mult=args.sigma, seed=args.seed,
    )
    data = train.gen_signal_dataset(spec)
    model = train.build_method_model(args.method, args.n, args.T, seed=args.seed)
    lr = args.lr if args.lr is not None else train.METHOD_LR.get(args.method, 1e-3)
    metrics = train.train_model(
        model, data, epochs=args.epochs, lr=lr, batch=args.batch,
        seed=args.seed, verbose=True,
    )
    print(f"test accuracy: {metrics.test_accuracy:.4f} "
          f"({metrics.epochs_ran} epochs, {metrics.seconds:.1f}s, backend={BACKEND})")
    if args.save:
        model.store.save(args.save)
        print(f"saved parameters to {args.save}")
    return 0


def cmd_compare(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    methods = args.methods.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = train.run_comparison(
        sizes, methods, seeds, n=args.n, T=args.T, sigma_mult=args.sigma,
        epochs=args.epochs, batch=args.batch, lr_override=args.lr, verbose=True,
    )
    csv_text = train.rows_to_csv(rows)
    with open(args.out, "w") as fh:
        fh.write(csv_text)
    svg_path = args.out.rsplit(".", 1)[0] + ".svg"
    with open(svg_path, "w") as fh:
        fh.write(emit_plot(csv_text))
    print(f"wrote {args.out} and {svg_path}")
    return 0


def cmd_separation(args) -> int:
    X, Y, (wx, wy) = dss.separation_pair()
    print(f"X = {X.tolist()}  Y = {Y.tolist()}")
    print(f"witness f(X) = {wx:g}, f(Y) = {wy:g}  (gap {abs(wx - wy):g})")
    in_orbit = any(np.array_equal(Z, Y) for Z in dss.product_orbit(X))
    print(f"Y in product-group orbit of X: {in_orbit}")
    worst = 0.0
    for seed in range(args.trials):
        model = dss.Model(dss.siamese_invariant_config(), seed=seed)
        ox = model(X[None, :, None, :]).data
        oy = model(Y[None, :, None, :]).data
        worst = max(worst, float(np.max(np.abs(ox - oy))))
    print(f"Siamese max |out(X) - out(Y)| over {args.trials} seeds: {worst:.3e}")
    ok = (not in_orbit) and worst < 1e-9 and abs(wx - wy) >= 1.0
    print("OK" if ok else "FAIL")
    return 0 if ok else 1


# ----------------------------------------------------------------------- plot

def emit_plot(csv_text: str) -> str:
    """Deterministic SVG line chart: accuracy vs train size, band = std."""
    lines = [ln for ln in csv_text.strip().splitlines() if ln]
    if not lines or lines[0] != train.CSV_HEADER:
        raise ValueError("malformed comparison CSV (bad header)")
    cells = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 6:
            raise ValueError(f"malformed CSV row: {ln!r}")
        method, size, acc = parts[0], int(parts[1]), float(parts[3])
        cells.setdefault(method, {}).setdefault(size, []).append(acc)

    W, H, ML, MB, MT, MR = 640, 420, 60, 50, 20, 20
    sizes_all = sorted({s for per in cells.values() for s in per})
    lo, hi = min(sizes_all), max(sizes_all)
    span = max(hi - lo, 1)

    def sx(s):
        return ML + (W - ML - MR) * (s - lo) / span

    def sy(a):
        return H - MB - (H - MB - MT) * a

    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{ML}" y1="{H - MB}" x2="{W - MR}" y2="{H - MB}" stroke="black"/>',
        f'<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{H - MB}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        parts.append(
            f'<text x="{ML - 8:.1f}" y="{y + 4:.1f}" font-size="12" '
            f'text-anchor="end">{frac:.2f}</text>'
        )
        parts.append(
            f'<line x1="{ML}" y1="{y:.1f}" x2="{W - MR}" y2="{y:.1f}" '
            f'stroke="#dddddd"/>'
        )
    for s in sizes_all:
        parts.append(
            f'<text x="{sx(s):.1f}" y="{H - MB + 18}" font-size="12" '
            f'text-anchor="middle">{s}</text>'
        )
    parts.append(
        f'<text x="{(ML + W - MR) / 2:.1f}" y="{H - 10}" font-size="13" '
        f'text-anchor="middle">training set size</text>'
    )
    for ci, method in enumerate(sorted(cells)):
        color = colors[ci % len(colors)]
        pts = []
        for s in sorted(cells[method]):
            accs = np.array(cells[method][s])
            pts.append((s, float(accs.mean()), float(accs.std())))
        band_up = " ".join(f"{sx(s):.1f},{sy(m + d):.1f}" for s, m, d in pts)
        band_dn = " ".join(
            f"{sx(s):.1f},{sy(m - d):.1f}" for s, m, d in reversed(pts)
        )
        parts.append(
            f'<polygon points="{band_up} {band_dn}" fill="{color}" '
            f'fill-opacity="0.15" stroke="none"/>'
        )
        line = " ".join(f"{sx(s):.1f},{sy(m):.1f}" for s, m, _ in pts)
        parts.append(
            f'<polyline points="{line}" fill="none" stroke="{color}" '
            f'stroke-width="2"/>'
        )
        for s, m, _ in pts:
            parts.append(
                f'<circle cx="{sx(s):.1f}" cy="{sy(m):.1f}" r="3" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{W - MR - 10}" y="{MT + 16 + 16 * ci}" font-size="13" '
            f'text-anchor="end" fill="{color}">{method}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------- argv

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="equiset",
        description="Equivariant set-layer toolkit: sharing schemes, bases, "
        "verification, and the signal-classification benchmark.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_seed(sp):
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("dim", help="equivariant-space dimension of a group")
    sp.add_argument("group", help=permgroup.GRAMMAR)
    sp.add_argument("--cap", type=int, default=permgroup.DEFAULT_CLOSURE_CAP)
    sp.set_defaults(fn=cmd_dim)

    sp = sub.add_parser("scheme", help="render the parameter-sharing scheme")
    sp.add_argument("group")
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(fn=cmd_scheme)

    sp = sub.add_parser("basis", help="export the orbit basis as JSON")
    sp.add_argument("group")
    sp.add_argument("-o", "--out", required=True)
    sp.set_defaults(fn=cmd_basis)

    sp = sub.add_parser("verify", help="equivariance residual suite")
    sp.add_argument("group")
    sp.add_argument("--trials", type=int, default=20)
    add_seed(sp)
    sp.set_defaults(fn=cmd_verify)

    sp = sub.add_parser("gradcheck", help="finite-difference check of a model")
    sp.add_argument("model", help="model config JSON file")
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--samples", type=int, default=64)
    add_seed(sp)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("signal-gen", help="generate the synthetic dataset")
    sp.add_argument("-o", "--out", required=True, help="output path stem")
    sp.add_argument("--train-count", type=int, default=1000)
    sp.add_argument("--val-count", type=int, default=300)
    sp.add_argument("--test-count", type=int, default=300)
    sp.add_argument("--n", type=int, default=25)
    sp.add_argument("--T", type=int, default=100)
    sp.add_argument("--sigma", type=float, default=3.0)
    add_seed(sp)
    sp.set_defaults(fn=cmd_signal_gen)

    sp = sub.add_parser("train", help="train one model on the signal task")
    sp.add_argument("--method", default="dss_sum", choices=train.METHODS)
    sp.add_argument("--train-count", type=int, default=1000)
    sp.add_argument("--val-count", type=int, default=300)
    sp.add_argument("--test-count", type=int, default=300)
    sp.add_argument("--n", type=int, default=25)
    sp.add_argument("--T", type=int, default=100)
    sp.add_argument("--sigma", type=float, default=3.0)
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("--save", help="write trained parameters to this path")
    add_seed(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("compare", help="method comparison over train sizes")
    sp.add_argument("--sizes", default="500,2000")
    sp.add_argument("--methods", default="dss_sum,siamese_ds,deepsets")
    sp.add_argument("--seeds", default="0,1,2")
    sp.add_argument("--n", type=int, default=25)
    sp.add_argument("--T", type=int, default=100)
    sp.add_argument("--sigma", type=float, default=3.0)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--batch", type=int, default=64)
    sp.add_argument("-o", "--out", default="comparison.csv")
    sp.set_defaults(fn=cmd_compare)

    sp = sub.add_parser("separation", help="Siamese-vs-DSS expressivity demo")
    sp.add_argument("--trials", type=int, default=20)
    add_seed(sp)
    sp.set_defaults(fn=cmd_separation)

    return p


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (permgroup.GroupError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
