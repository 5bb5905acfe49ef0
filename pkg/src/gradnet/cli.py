"""Command-line surface.

Exit codes: 0 success, 2 parameter error, 3 data/format error, 4 numerical
failure. Logs go to stderr; machine-readable results go to files.
"""

import argparse
import json
import sys

import numpy as np

from . import dataio, diffusion, evalmetrics, retrieval, training
from .anchors import build_anchor_model, code_matrix
from .dataio import (DataError, FeatureMatrix, FormatError, read_ckpt,
                     read_csrg, read_fmat, write_ckpt, write_csrg, write_fmat)
from .graph import (AffinityGraph, ParameterError, SimilarityMetric,
                    ValidationError, build_mutual_knn, transition_matrix)
from .kernels import CSRMatrix, ShapeError
from .model import ModelParams
from .training import TrainConfig, embed, train

EXIT_OK = 0
EXIT_PARAM = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _metric_from_args(tag: str, sigma: float) -> SimilarityMetric:
    return SimilarityMetric(tag, sigma)


def _load_graph(path, node_ids, k=0, metric=None) -> AffinityGraph:
    A = read_csrg(path)
    S = transition_matrix(A)
    return AffinityGraph(A, S, A.row_sums(), k, metric or SimilarityMetric(),
                         node_ids or [str(i) for i in range(A.rows)])


def _read_config_file(path) -> dict:
    cfg = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            cfg[key.strip()] = value.strip()
    return cfg


def cmd_gen_toy(args):
    fm = dataio.generate_toy(args.per_letter, args.noise, args.seed)
    write_fmat(fm, args.out)
    print(f"wrote {fm.n}x{fm.d} toy features to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_build_graph(args):
    fm = read_fmat(args.features)
    metric = _metric_from_args(args.metric, args.sigma)
    graph = build_mutual_knn(fm, args.k, metric)
    write_csrg(graph.A, args.out)
    print(f"wrote mutual {args.k}-NN graph ({graph.A.nnz} edges) to {args.out}",
          file=sys.stderr)
    return EXIT_OK


def cmd_anchors(args):
    fm = read_fmat(args.features)
    model = build_anchor_model(fm, args.B, args.c, args.seed)
    anchors_path = args.out + ".anchors.fmat"
    codes_path = args.out + ".codes.csrg"
    write_fmat(FeatureMatrix(model.U, [f"anchor{b}" for b in range(model.B)]),
               anchors_path)
    write_csrg(model.Z, codes_path)
    print(f"wrote {model.B} anchors to {anchors_path} and codes to {codes_path}",
          file=sys.stderr)
    return EXIT_OK


def cmd_diffuse(args):
    if not (0.0 < args.alpha < 1.0):
        raise ParameterError(f"alpha must lie in (0,1), got {args.alpha}")
    A = read_csrg(args.graph)
    S = transition_matrix(A)
    if args.mode == "tpg":
        out = diffusion.tpg_iterate(S, A.to_dense(), args.T)
        write_csrg(CSRMatrix.from_dense(out), args.out)
        print(f"wrote TPG-diffused affinity (T={args.T}) to {args.out}",
              file=sys.stderr)
        return EXIT_OK
    queries = [int(x) for x in args.queries.split(",")]
    if not queries:
        raise ParameterError("need at least one query position")
    f0 = np.zeros(A.rows)
    f0[queries] = 1.0
    if args.mode == "closed":
        f = diffusion.random_walk_closed(S, f0, args.alpha)
    else:
        f, _ = diffusion.random_walk_iterate(S, f0, args.alpha,
                                             args.max_iters, args.tol)
    order = diffusion.rank_from_state(f, queries)
    # "+"-joined so the id stays a single CSV field
    ranking = retrieval.Ranking("+".join(map(str, queries)),
                                [str(i) for i in order], f[order], order)
    retrieval.export_rankings_csv([ranking], args.out)
    print(f"wrote diffusion ranking to {args.out}", file=sys.stderr)
    return EXIT_OK


def _train_config_from(args) -> tuple[TrainConfig, dict]:
    cfg = _read_config_file(args.config) if args.config else {}

    def pick(flag, key, cast, default):
        if flag is not None:
            return flag
        if key in cfg:
            return cast(cfg[key])
        return default

    dims_raw = pick(args.dims, "dims", str, "1024,256,128")
    config = TrainConfig(
        dims=tuple(int(x) for x in str(dims_raw).split(",")),
        k=pick(args.k, "k", int, 15),
        anchors=pick(args.B, "anchors", int, 100),
        code_support=pick(args.c, "code_support", int, 5),
        dropout=pick(args.dropout, "dropout", float, 0.3),
        batch_size=pick(args.batch_size, "batch_size", int, 64),
        epochs=pick(args.epochs, "epochs", int, 300),
        base_lr=pick(args.lr, "base_lr", float, 3e-4),
        alpha_loss=pick(args.alpha_loss, "alpha_loss", float, 1.0),
        beta=pick(args.beta, "beta", float, 1e5),
        lam=pick(args.lam, "lam", float, 1e-5),
        seed=pick(args.seed, "seed", int, 0),
        node_budget=pick(args.node_budget, "node_budget", int, 4096),
    )
    paths = {
        "features": pick(args.features, "features", str, None),
        "graph": pick(args.graph, "graph", str, None),
        "codes": pick(args.codes, "codes", str, None),
    }
    if paths["features"] is None:
        raise ParameterError("a features file is required (--features or config)")
    return config, paths


def _effective_config_echo(config: TrainConfig, paths) -> dict:
    echo = {
        "dims": ",".join(map(str, config.dims)),
        "k": config.k, "anchors": config.anchors,
        "code_support": config.code_support, "dropout": config.dropout,
        "batch_size": config.batch_size, "epochs": config.epochs,
        "base_lr": config.base_lr, "alpha_loss": config.alpha_loss,
        "beta": config.beta, "lam": config.lam, "seed": config.seed,
        "node_budget": config.node_budget,
    }
    echo.update({k: v for k, v in paths.items() if v})
    return echo


def cmd_train(args):
    config, paths = _train_config_from(args)
    fm = read_fmat(paths["features"])
    if paths["graph"]:
        graph = _load_graph(paths["graph"], list(fm.ids), config.k)
    else:
        graph = build_mutual_knn(fm, config.k)
    if paths["codes"]:
        Z = read_csrg(paths["codes"], cols=config.anchors)
        from .anchors import AnchorModel

        anchor_model = AnchorModel(np.zeros((config.anchors, fm.d), np.float32),
                                   Z, config.code_support)
    else:
        anchor_model = None
    params, _ = train(fm, graph, anchor_model, config)
    echo = _effective_config_echo(config, paths)
    echo["dropout_p"] = params.dropout_p
    echo["leaky_slope"] = params.leaky_slope
    write_ckpt(params.layers, params.dims, echo,
               dataio.file_sha256(paths["features"]), args.out)
    print(f"wrote checkpoint to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_embed(args):
    layers, dims, echo, _ = read_ckpt(args.ckpt)
    fm = read_fmat(args.features)
    graph = _load_graph(args.graph, list(fm.ids))
    B = dims[0] - fm.d
    if B < 0:
        raise ShapeError(f"checkpoint d0={dims[0]} smaller than feature dim {fm.d}")
    if args.codes:
        Z = read_csrg(args.codes, cols=B)
    elif B == 0:
        Z = CSRMatrix.zeros(fm.n, 0)
    else:
        raise ParameterError("--codes is required when the model was trained "
                             "with sparse-code features")
    params = ModelParams([(w1.astype(np.float64), w2.astype(np.float64))
                          for w1, w2 in layers], dims,
                         float(echo.get("leaky_slope", 0.2)),
                         float(echo.get("dropout_p", 0.3)))
    from .anchors import AnchorModel

    H = embed(fm, graph, AnchorModel(np.zeros((B, fm.d), np.float32), Z, 1), params)
    write_fmat(FeatureMatrix(H.astype(np.float32), list(fm.ids), fm.labels), args.out)
    print(f"wrote {H.shape[0]}x{H.shape[1]} embeddings to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_query(args):
    emb = read_fmat(args.embeddings)
    orig = read_fmat(args.features)
    queries = read_fmat(args.query_file)
    metric = _metric_from_args(args.metric, args.sigma)
    rankings = []
    for r in range(queries.n):
        h_q = retrieval.qfe_iterate(queries.data[r], orig, emb.data,
                                    args.qfe_k, args.rounds, metric)
        ranking = retrieval.retrieve(h_q, emb.data, args.topk, list(emb.ids),
                                     query_id=queries.ids[r])
        rankings.append(ranking)
    if args.out.endswith(".jsonl"):
        retrieval.export_rankings_jsonl(rankings, args.out)
    else:
        retrieval.export_rankings_csv(rankings, args.out)
    print(f"wrote {len(rankings)} rankings to {args.out}", file=sys.stderr)
    return EXIT_OK


def _read_rankings_csv(path):
    rows = {}
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if not header.startswith("query_id"):
            raise FormatError(f"{path}: missing rankings header")
        for line in f:
            line = line.strip()
            if not line:
                continue
            qid, rank, inst, score = line.split(",", 3)
            rows.setdefault(qid, []).append((int(rank), inst, float(score)))
    rankings = []
    for qid, items in rows.items():
        items.sort()
        rankings.append(retrieval.Ranking(qid, [inst for _, inst, _ in items],
                                          np.array([s for _, _, s in items])))
    return rankings


def cmd_eval(args):
    rankings = _read_rankings_csv(args.rankings)
    with open(args.ground_truth, "r", encoding="utf-8") as f:
        gt = json.load(f)
    if args.metric == "map":
        ground_truth = {q: set(v) for q, v in gt["positives"].items()}
        junk = {q: set(v) for q, v in gt.get("junk", {}).items()}
        per_query = []
        for r in rankings:
            if r.query_id not in ground_truth:
                raise evalmetrics.MetricError(f"no ground truth for {r.query_id!r}")
            per_query.append(evalmetrics.average_precision(
                r.instance_ids, ground_truth[r.query_id], junk.get(r.query_id, ())))
        value = 100.0 * float(np.mean(per_query))
        report = evalmetrics.metric_report(rankings, [100.0 * v for v in per_query],
                                           "mAP", value)
    else:
        labels = {k: int(v) for k, v in gt["labels"].items()}
        value = evalmetrics.bullseye(rankings, labels, args.K)
        report = evalmetrics.metric_report(rankings, [], "bullseye", value)
    evalmetrics.write_metric_report(report, args.out)
    print(f"{args.metric}={value:.4f} (report: {args.out})", file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gradnet")
    p.add_argument("--threads", type=int, default=1,
                   help="kernel parallelism; 1 guarantees determinism")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-toy", help="generate the 2-D PAMI toy dataset")
    g.add_argument("--per-letter", type=int, default=375)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_toy)

    g = sub.add_parser("build-graph", help="build the mutual k-NN affinity graph")
    g.add_argument("--features", required=True)
    g.add_argument("--k", type=int, default=15)
    g.add_argument("--metric", default="inv_euclidean",
                   choices=["inv_euclidean", "cosine", "gaussian_euclidean"])
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_build_graph)

    g = sub.add_parser("anchors", help="k-means anchors and simplex sparse codes")
    g.add_argument("--features", required=True)
    g.add_argument("--B", type=int, default=100)
    g.add_argument("--c", type=int, default=5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output prefix")
    g.set_defaults(func=cmd_anchors)

    g = sub.add_parser("diffuse", help="classical diffusion baselines")
    g.add_argument("--graph", required=True)
    g.add_argument("--queries", default="", help="comma-separated query positions")
    g.add_argument("--alpha", type=float, default=0.9)
    g.add_argument("--mode", default="closed", choices=["iterate", "closed", "tpg"])
    g.add_argument("--T", type=int, default=30, help="TPG iterations")
    g.add_argument("--max-iters", type=int, default=10000)
    g.add_argument("--tol", type=float, default=1e-10)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_diffuse)

    g = sub.add_parser("train", help="train the graph diffusion network")
    g.add_argument("--config", default=None, help="key=value config file")
    g.add_argument("--features", default=None)
    g.add_argument("--graph", default=None)
    g.add_argument("--codes", default=None, help=".csrg sparse-code matrix")
    g.add_argument("--dims", default=None)
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--B", type=int, default=None)
    g.add_argument("--c", type=int, default=None)
    g.add_argument("--dropout", type=float, default=None)
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--epochs", type=int, default=None)
    g.add_argument("--lr", type=float, default=None)
    g.add_argument("--alpha-loss", type=float, default=None)
    g.add_argument("--beta", type=float, default=None)
    g.add_argument("--lam", type=float, default=None)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--node-budget", type=int, default=None)
    g.add_argument("--resume", default=None, help="unused placeholder for now")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("embed", help="write learned features for a dataset")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--features", required=True)
    g.add_argument("--graph", required=True)
    g.add_argument("--codes", default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_embed)

    g = sub.add_parser("query", help="inductive retrieval via query feature expansion")
    g.add_argument("--embeddings", required=True)
    g.add_argument("--features", required=True, help="original descriptors")
    g.add_argument("--query-file", required=True)
    g.add_argument("--qfe-k", dest="qfe_k", type=int, default=15)
    g.add_argument("--rounds", type=int, default=1)
    g.add_argument("--topk", type=int, default=100)
    g.add_argument("--metric", default="inv_euclidean",
                   choices=["inv_euclidean", "cosine", "gaussian_euclidean"])
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_query)

    g = sub.add_parser("eval", help="score rankings against ground truth")
    g.add_argument("--rankings", required=True)
    g.add_argument("--ground-truth", required=True)
    g.add_argument("--metric", default="map", choices=["map", "bullseye"])
    g.add_argument("--K", type=int, default=15)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_eval)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParameterError, ValueError) as e:
        if isinstance(e, (FormatError, DataError)):
            print(f"error: {e}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARAM
    except (FormatError, DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (diffusion.NumericalError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
