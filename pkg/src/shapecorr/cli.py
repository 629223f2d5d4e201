"""Command-line frontend wiring the toolkit into reproducible file-based workflows.

Every subcommand is a pure function of its input files, flags and seeds.
Reports are written as CSV plus a rendered PNG figure next to each CSV
(disable with --no-figures).
"""

import argparse
import csv
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_FORMAT = 4
EXIT_MESH_INVALID = 5
EXIT_BAD_ARGS = 6
EXIT_NUMERICAL = 7

EXIT_CODE_HELP = """exit codes:
  0  success
  2  usage error (unknown flag or subcommand)
  3  missing input file
  4  file format violation (bad magic, truncation, malformed text)
  5  mesh validation failure (parse, non-manifold, degenerate, disconnected)
  6  argument or dimension mismatch
  7  numerical failure (eigensolver, singular system, divergence)
"""


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="shapecorr",
        description="Spectral shape-correspondence toolkit",
        epilog=EXIT_CODE_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (default: SHAPECORR_THREADS or unlimited)")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip rendering PNG figures next to CSV reports")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic acceptance collection")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--subdiv", type=int, default=3, help="icosphere subdivision level")

    p = sub.add_parser("eigen", help="compute a truncated Laplace-Beltrami basis")
    p.add_argument("mesh", help="OFF or OBJ mesh file")
    p.add_argument("-k", type=int, default=50, help="basis size")
    p.add_argument("-o", "--out", required=True, help="output basis file")

    p = sub.add_parser("wks", help="compute wave kernel signatures from a basis")
    p.add_argument("basis", help="basis file")
    p.add_argument("-d", type=int, default=128, help="number of energy samples")
    p.add_argument("-o", "--out", required=True, help="output matrix file")

    p = sub.add_parser("match", help="one-shot pair inference from basis+descriptor files")
    p.add_argument("basis_a")
    p.add_argument("desc_a")
    p.add_argument("basis_b")
    p.add_argument("desc_b")
    p.add_argument("--lam", type=float, default=1e-3, help="commutativity weight")
    p.add_argument("--alpha", type=float, default=None,
                   help="also run the soft spatial branch at this sharpness")
    p.add_argument("--model", default=None, help="shared-linear checkpoint to featurize with")
    p.add_argument("-o", "--out", default=".", help="output directory for map files")
    p.add_argument("--ids", nargs=2, metavar=("ID_A", "ID_B"), default=("A", "B"),
                   help="shape identifiers recorded in the output files")

    p = sub.add_parser("train", help="train a feature model on a manifest collection")
    p.add_argument("manifest")
    p.add_argument("--mode", choices=["two-branch", "spectral-only", "spatial-only"],
                   default="two-branch")
    p.add_argument("--features", choices=["shared-linear", "direct-coefficients"],
                   default="shared-linear")
    p.add_argument("--iters", type=int, default=10000)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--alpha0", type=float, default=1.0)
    p.add_argument("--alpha-step", type=float, default=5.0)
    p.add_argument("--epoch-len", type=int, default=None,
                   help="steps per epoch (default: one pass over the ordered pairs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-k", type=int, default=50)
    p.add_argument("-d", type=int, default=128)
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--w-orth", type=float, default=1.0)
    p.add_argument("--w-consist", type=float, default=1.0)
    p.add_argument("--w-desc", type=float, default=0.0)
    p.add_argument("--w-lap", type=float, default=0.0)
    p.add_argument("--w-bij", type=float, default=0.0)
    p.add_argument("--fps", type=int, default=None,
                   help="downsample the spatial branch to this many FPS vertices")
    p.add_argument("--svd-m", type=int, default=None,
                   help="truncate embedding coefficients to m joint SVD directions")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("-o", "--out", required=True, help="output directory")

    p = sub.add_parser("infer", help="write functional and point maps for manifest pairs")
    p.add_argument("manifest")
    p.add_argument("--model", required=True, help="checkpoint file")
    p.add_argument("-o", "--out", required=True, help="output maps directory")

    p = sub.add_parser("eval-geo", help="mean geodesic error of a map against ground truth")
    p.add_argument("pred", help="predicted point-map file")
    p.add_argument("gt", help="ground-truth point-map file")
    p.add_argument("target_mesh", help="unit-area target mesh")
    p.add_argument("-o", "--out", default=None, help="directory for per-vertex CSV + figure")

    p = sub.add_parser("eval-cycle", help="cycle-consistency audit over a maps directory")
    p.add_argument("manifest")
    p.add_argument("mapsdir")
    p.add_argument("--triplets", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default=None,
                   help="report directory (default: the maps directory)")
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _apply_thread_cap(argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "eigen": _cmd_eigen,
        "wks": _cmd_wks,
        "match": _cmd_match,
        "train": _cmd_train,
        "infer": _cmd_infer,
        "eval-geo": _cmd_eval_geo,
        "eval-cycle": _cmd_eval_cycle,
    }
    try:
        handlers[args.command](args)
    except Exception as exc:
        code = _classify(exc)
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


def _apply_thread_cap(argv):
    # must happen before numpy loads its BLAS
    cap = os.environ.get("SHAPECORR_THREADS")
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            cap = argv[idx + 1]
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(cap))


def _classify(exc):
    from .codecs import CodecError
    from .fmap import SingularSystemError
    from .mesh import MeshError, MeshParseError
    from .spectral import EigensolverError
    from .training import TrainingDivergenceError

    if isinstance(exc, FileNotFoundError):
        return EXIT_MISSING_FILE
    if isinstance(exc, (CodecError, MeshParseError)):
        return EXIT_FORMAT
    if isinstance(exc, MeshError):
        return EXIT_MESH_INVALID
    if isinstance(exc, (SingularSystemError, EigensolverError,
                        TrainingDivergenceError, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError, KeyError)):
        return EXIT_BAD_ARGS
    if isinstance(exc, OSError):
        return EXIT_MISSING_FILE
    raise exc


def _require_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def _cmd_synth(args):
    from . import codecs, synth
    from .mesh import normalize_area, save_obj

    os.makedirs(args.out, exist_ok=True)
    collection = synth.default_collection(args.subdiv)
    manifest_lines = ["# synthetic acceptance collection", ""]
    gt_lines = []
    for shape_id, mesh, base_id, gt in collection:
        normalized = normalize_area(mesh)
        obj_path = os.path.join(args.out, f"{shape_id}.obj")
        save_obj(normalized, obj_path)
        manifest_lines.append(f"shape {shape_id} {shape_id}.obj")
        if base_id is not None:
            gt_name = f"gt_{base_id}__{shape_id}.map"
            _write_gt(os.path.join(args.out, gt_name), gt, base_id, shape_id)
            gt_lines.append(f"pair {base_id} {shape_id} gt={gt_name}")
    manifest_lines.append("")
    manifest_lines.extend(gt_lines)
    manifest_lines.append("pairs all")
    with open(os.path.join(args.out, "manifest.txt"), "w") as f:
        f.write("\n".join(manifest_lines) + "\n")
    print(f"wrote {len(collection)} shapes to {args.out}")


def _write_gt(path, gt, from_id, to_id):
    from .fmap import PointMap
    from .codecs import write_pointmap

    write_pointmap(path, PointMap(gt.assignment, n_to=gt.n_target,
                                  from_id=from_id, to_id=to_id))


def _cmd_eigen(args):
    from .codecs import write_basis
    from .mesh import load_mesh
    from .spectral import compute_basis

    mesh = load_mesh(_require_file(args.mesh))
    basis = compute_basis(mesh, args.k)
    write_basis(args.out, basis)
    print(f"basis: n={basis.n} k={basis.k} lambda_max={basis.lam[-1]:.6f}")


def _cmd_wks(args):
    from .codecs import read_basis, write_matrix
    from .descriptors import wks

    basis = read_basis(_require_file(args.basis))
    ds = wks(basis, args.d)
    write_matrix(args.out, ds.values)
    print(f"wks: n={ds.n} d={ds.d} sigma={ds.sigma:.6f}")


def _load_pair_inputs(args):
    from .codecs import read_basis, read_matrix

    basis_a = read_basis(_require_file(args.basis_a))
    desc_a = read_matrix(_require_file(args.desc_a))
    basis_b = read_basis(_require_file(args.basis_b))
    desc_b = read_matrix(_require_file(args.desc_b))
    if desc_a.shape[0] != basis_a.n or desc_b.shape[0] != basis_b.n:
        raise ValueError("descriptor rows do not match basis vertex counts")
    return basis_a, desc_a, basis_b, desc_b


def _cmd_match(args):
    import numpy as np

    from .codecs import read_checkpoint, write_fmap, write_pointmap
    from .fmap import CoeffMatrix, FORWARD_ROWS, fmap_to_pointmap, solve_fmreg
    from .softmap import soft_correspondence, softmap_to_fmap
    from .spectral import project
    from .training import SHARED_LINEAR

    basis_a, desc_a, basis_b, desc_b = _load_pair_inputs(args)
    id_a, id_b = args.ids
    if args.model is not None:
        params, meta = read_checkpoint(_require_file(args.model))
        if meta["feature_mode"] != SHARED_LINEAR:
            raise ValueError(
                "match supports shared-linear checkpoints; per-shape models "
                "are tied to their manifest (use infer)"
            )
        theta = params["theta"]
        if theta.shape[0] != desc_a.shape[1]:
            raise ValueError("checkpoint input width does not match descriptors")
        desc_a = desc_a @ theta
        desc_b = desc_b @ theta
    a = CoeffMatrix(project(basis_a, desc_a), shape_id=id_a)
    b = CoeffMatrix(project(basis_b, desc_b), shape_id=id_b)
    c1, objective = solve_fmreg(a, b, basis_a.lam, basis_b.lam, lam=args.lam)
    os.makedirs(args.out, exist_ok=True)
    write_fmap(os.path.join(args.out, f"{id_a}__{id_b}.fmap"), c1)
    pmap = fmap_to_pointmap(c1, basis_a, basis_b, direction=FORWARD_ROWS)
    write_pointmap(os.path.join(args.out, f"{id_a}__{id_b}.map"), pmap)
    dev = float(np.abs(c1.values - np.eye(c1.k)).max())
    print(f"desc_residual: {objective:.6f}")
    print(f"identity_deviation: {dev:.6f}")
    print(f"gram_condition: {a.gram_condition():.6e}")
    if args.alpha is not None:
        emb_a = basis_a.phi @ a.values
        emb_b = basis_b.phi @ b.values
        pi = soft_correspondence(emb_a, emb_b, args.alpha, from_id=id_b, to_id=id_a)
        c2 = softmap_to_fmap(pi, basis_a, basis_b)
        write_fmap(os.path.join(args.out, f"{id_a}__{id_b}.soft.fmap"), c2)
        soft_assign = pi.weights.argmax(axis=1)
        consist = float(((c1.values - c2.values) ** 2).sum())
        print(f"branch_consistency: {consist:.6f}")
        from .fmap import PointMap

        write_pointmap(
            os.path.join(args.out, f"{id_b}__{id_a}.soft.map"),
            PointMap(soft_assign, n_to=basis_a.n, from_id=id_b, to_id=id_a),
        )


def _load_shapes(manifest, k, d):
    """Build Shape objects from a manifest, computing missing bases/descriptors."""
    from .codecs import read_basis, read_matrix
    from .descriptors import DescriptorSet, wks
    from .mesh import load_mesh, normalize_area
    from .spectral import compute_basis
    from .training import Shape

    shapes = []
    for entry in manifest.shapes:
        mesh = normalize_area(load_mesh(_require_file(entry["mesh"])))
        if entry["basis"] is not None:
            basis = read_basis(_require_file(entry["basis"]))
            if basis.n != mesh.n_vertices:
                raise ValueError(f"basis for {entry['id']} does not match its mesh")
        else:
            basis = compute_basis(mesh, k)
        if entry["desc"] is not None:
            values = read_matrix(_require_file(entry["desc"]))
            if values.shape[0] != basis.n:
                raise ValueError(f"descriptors for {entry['id']} do not match its mesh")
            desc = DescriptorSet(values, energies=[0.0] * values.shape[1], sigma=0.0)
        else:
            desc = wks(basis, d)
        shapes.append(Shape(entry["id"], mesh, basis, desc))
    return shapes


def _cmd_train(args):
    from . import report
    from .codecs import read_manifest, write_checkpoint
    from .training import (
        DIRECT_COEFFS, FeatureModel, HISTORY_FIELDS, TrainConfig, train,
    )

    manifest = read_manifest(_require_file(args.manifest))
    config = TrainConfig(
        k=args.k, d=args.d, lam=args.lam, lr=args.lr, iterations=args.iters,
        alpha0=args.alpha0, alpha_step=args.alpha_step, epoch_len=args.epoch_len,
        w_orth=args.w_orth, w_consist=args.w_consist, w_desc=args.w_desc,
        w_lap=args.w_lap, w_bij=args.w_bij, mode=args.mode,
        deterministic=args.deterministic, seed=args.seed,
        fps_count=args.fps, svd_m=args.svd_m,
    )
    shapes = _load_shapes(manifest, config.k, config.d)
    model = None
    if args.features == DIRECT_COEFFS:
        model = FeatureModel.direct(
            [s.id for s in shapes], config.k, config.d, seed=config.seed
        )
    model, history = train(shapes, config, model=model)
    os.makedirs(args.out, exist_ok=True)
    write_checkpoint(os.path.join(args.out, "model.ckpt"), model, config,
                     final_alpha=history[-1]["alpha"])
    hist_path = os.path.join(args.out, "history.csv")
    with open(hist_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_FIELDS)
        for rec in history:
            writer.writerow(
                [rec["iteration"], rec["epoch"], f"{rec['alpha']:.6f}", rec["pair"]]
                + [f"{rec[key]:.6e}" for key in ("orth", "consist", "desc", "lap", "bij", "total")]
            )
    if not args.no_figures:
        report.save_history_figure(history, os.path.join(args.out, "history.png"))
    print(f"final_total_loss: {history[-1]['total']:.6e}")
    print(f"checkpoint: {os.path.join(args.out, 'model.ckpt')}")


def _reconstruct_model(params, meta, shapes):
    from .training import DIRECT_COEFFS, FeatureModel, SHARED_LINEAR

    if meta["feature_mode"] == SHARED_LINEAR:
        return FeatureModel(SHARED_LINEAR, params)
    missing = [s.id for s in shapes if f"A:{s.id}" not in params]
    if missing:
        raise ValueError(f"checkpoint lacks coefficients for shapes: {missing}")
    return FeatureModel(DIRECT_COEFFS, params)


def _cmd_infer(args):
    from .codecs import (
        read_checkpoint, read_manifest, write_fmap, write_matrix, write_pointmap,
    )
    from .fmap import FORWARD_ROWS, fmap_to_pointmap
    from .softmap import soft_correspondence, softmap_to_fmap
    from .training import SPATIAL_ONLY, Shape, TrainConfig, forward_pair

    manifest = read_manifest(_require_file(args.manifest))
    params, meta = read_checkpoint(_require_file(args.model))
    shapes = _load_shapes(manifest, meta["k"], meta["d"])
    model = _reconstruct_model(params, meta, shapes)
    config = TrainConfig(k=meta["k"], d=meta["d"], lam=meta["lam"],
                         mode=meta["train_mode"])
    alpha = meta["final_alpha"]
    by_id = {s.id: s for s in shapes}
    os.makedirs(args.out, exist_ok=True)
    for s in shapes:
        write_matrix(os.path.join(args.out, f"A_{s.id}.fmat"), model.coeff(s).values)
    count = 0
    for pair in manifest.pairs:
        si, sj = by_id[pair["from"]], by_id[pair["to"]]
        if config.mode == SPATIAL_ONLY:
            a_i, a_j = model.coeff(si), model.coeff(sj)
            pi = soft_correspondence(si.basis.phi @ a_i.values,
                                     sj.basis.phi @ a_j.values, alpha,
                                     from_id=sj.id, to_id=si.id)
            cmap = softmap_to_fmap(pi, si.basis, sj.basis)
        else:
            out = forward_pair(model, si, sj, alpha, config)
            cmap = out.c1
        write_fmap(os.path.join(args.out, f"{si.id}__{sj.id}.fmap"), cmap)
        pmap = fmap_to_pointmap(cmap, si.basis, sj.basis, direction=FORWARD_ROWS)
        write_pointmap(os.path.join(args.out, f"{si.id}__{sj.id}.map"), pmap)
        count += 1
    print(f"wrote {count} pair maps to {args.out}")


def _cmd_eval_geo(args):
    from . import report
    from .codecs import read_groundtruth, read_pointmap
    from .evaluation import geodesic_error
    from .mesh import load_mesh

    pred = read_pointmap(_require_file(args.pred))
    gt = read_groundtruth(_require_file(args.gt))
    mesh = load_mesh(_require_file(args.target_mesh))
    mean_x100, per_vertex = geodesic_error(pred, gt, mesh)
    print(f"mean_geo_err_x100: {mean_x100:.6f}")
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        csv_path = os.path.join(args.out, "geo_errors.csv")
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["vertex", "geodesic_error"])
            for idx, err in enumerate(per_vertex):
                writer.writerow([idx, f"{err:.6e}"])
        if not args.no_figures:
            report.save_accuracy_figure(
                per_vertex, os.path.join(args.out, "accuracy.png")
            )


def _cmd_eval_cycle(args):
    from . import report
    from .codecs import read_fmap, read_manifest, read_matrix, read_pointmap
    from .consistency import (
        functional_cycle_residual_on_a, sample_triplets,
        spatial_cycle_deviation, spectral_cycle_residual,
    )
    from .fmap import CoeffMatrix
    from .mesh import load_mesh, normalize_area

    manifest = read_manifest(_require_file(args.manifest))
    ids = [s["id"] for s in manifest.shapes]
    if len(ids) < 3:
        raise ValueError("cycle audit needs at least 3 shapes")
    fmaps, pmaps = {}, {}
    for a_idx, a in enumerate(ids):
        for b_idx, b in enumerate(ids):
            if a == b:
                continue
            fpath = os.path.join(args.mapsdir, f"{a}__{b}.fmap")
            ppath = os.path.join(args.mapsdir, f"{a}__{b}.map")
            if os.path.isfile(fpath):
                fmaps[(a_idx, b_idx)] = read_fmap(fpath)
            if os.path.isfile(ppath):
                pmaps[(a_idx, b_idx)] = read_pointmap(ppath)
    if not fmaps:
        raise FileNotFoundError(f"no .fmap files for manifest pairs in {args.mapsdir}")
    coeffs = {}
    for idx, sid in enumerate(ids):
        apath = os.path.join(args.mapsdir, f"A_{sid}.fmat")
        if os.path.isfile(apath):
            coeffs[idx] = CoeffMatrix(read_matrix(apath), shape_id=sid)
    meshes = {
        idx: normalize_area(load_mesh(_require_file(entry["mesh"])))
        for idx, entry in enumerate(manifest.shapes)
    }
    triplets = sample_triplets(len(ids), args.triplets, seed=args.seed)

    spec_mean, spec_vals = spectral_cycle_residual(fmaps, triplets, per_triplet=True)
    func_vals = None
    if len(coeffs) == len(ids):
        func_mean, func_vals = functional_cycle_residual_on_a(
            fmaps, coeffs, triplets, per_triplet=True
        )
    spat_vals = None
    if len(pmaps) == len(fmaps):
        spat_mean, spat_vals = spatial_cycle_deviation(
            pmaps, meshes, triplets, per_triplet=True
        )

    out_dir = args.out or args.mapsdir
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "cycle_report.csv")
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["i", "j", "l", "spectral", "functional", "spatial"])
        for row, (i, j, l) in enumerate(triplets.triplets):
            writer.writerow([
                ids[i], ids[j], ids[l],
                f"{spec_vals[row]:.6e}",
                f"{func_vals[row]:.6e}" if func_vals is not None else "",
                f"{spat_vals[row]:.6e}" if spat_vals is not None else "",
            ])
        writer.writerow([
            "mean", "", "",
            f"{spec_mean:.6e}",
            f"{func_mean:.6e}" if func_vals is not None else "",
            f"{spat_mean:.6e}" if spat_vals is not None else "",
        ])
    print(f"spectral_cycle_residual: {spec_mean:.6e}")
    if func_vals is not None:
        print(f"functional_cycle_residual: {func_mean:.6e}")
    if spat_vals is not None:
        print(f"spatial_cycle_deviation: {spat_mean:.6e}")
    if not args.no_figures:
        report.save_cycle_figure(
            spec_vals, func_vals, spat_vals, os.path.join(out_dir, "cycle_report.png")
        )


if __name__ == "__main__":
    sys.exit(main())
