"""Command-line entry point tying the pipeline together.

Subcommands: network build, network stats, synth, encode, train,
predict, evaluate, baseline-mc, attn-dump. Hyperparameters come from an
optional flat key=value config file plus per-key flags; flags win.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import codec, network, synth
from .checkpoint import load_checkpoint, read_checkpoint_config
from .errors import ConfigError, DataError, NumericError, RoadTrajError
from .markov import MarkovChainPredictor
from .metrics import compute_metrics, per_trajectory_detail
from .model import ModelConfig, VARIANTS
from .training import TrainConfig, segment, train

# config-file key -> (dataclass field, parser)
MODEL_KEYS = {
    "k": ("K", int),
    "m": ("M", int),
    "d": ("D", int),
    "b": ("B", int),
    "s": ("S", int),
    "q_time": ("Q_time", int),
    "q_weather": ("Q_weather", int),
    "q_individual": ("Q_individual", int),
    "l_in": ("l_in", int),
    "l_out": ("l_out", int),
    "variant": ("variant", str),
    "driver_vocab": ("driver_vocab", int),
}
TRAIN_KEYS = {
    "batch_size": ("batch_size", int),
    "slide": ("slide", int),
    "lr0": ("lr0", float),
    "lr_decay": ("lr_decay", float),
    "epochs": ("epochs", int),
    "dropout": ("dropout", float),
    "sampling_epochs": ("sampling_epochs", int),
    "seed": ("seed", int),
    "boundary_mode": ("boundary_mode", str),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def read_config_file(path):
    """Parse a flat `key = value` file; unknown keys are rejected."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" in line:
                key, _, val = line.partition("=")
            else:
                key, _, val = line.partition(" ")
            key = key.strip()
            val = val.strip()
            if key not in MODEL_KEYS and key not in TRAIN_KEYS:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            if not val:
                raise ConfigError(f"{path}:{line_no}: missing value for {key!r}")
            entry = MODEL_KEYS.get(key) or TRAIN_KEYS[key]
            try:
                values[key] = entry[1](val)
            except ValueError:
                raise ConfigError(
                    f"{path}:{line_no}: bad value {val!r} for {key!r}"
                ) from None
    return values


def _add_hyper_flags(parser):
    g = parser.add_argument_group("hyperparameters (override the config file)")
    g.add_argument("--config", help="flat key=value config file")
    for key, (_field, typ) in {**MODEL_KEYS, **TRAIN_KEYS}.items():
        flag = "--" + key.replace("_", "-")
        if key == "variant":
            g.add_argument(flag, choices=VARIANTS, default=None)
        else:
            g.add_argument(flag, type=typ, default=None)


def merged_settings(args):
    """File values overridden by explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in {**MODEL_KEYS, **TRAIN_KEYS}:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            values[key] = flag_val
    return values


def make_model_config(values, node_vocab, driver_vocab):
    kwargs = {"node_vocab": node_vocab, "driver_vocab": driver_vocab}
    for key, (fieldname, _typ) in MODEL_KEYS.items():
        if key in values:
            kwargs[fieldname] = values[key]
    return ModelConfig(**kwargs).validate()


def make_train_config(values):
    kwargs = {}
    for key, (fieldname, _typ) in TRAIN_KEYS.items():
        if key in values:
            kwargs[fieldname] = values[key]
    return TrainConfig(**kwargs).validate()


def build_network(nodes_path, edges_path, k):
    net = network.load_network(nodes_path, edges_path)
    network.compute_headings(net)
    codec.assign_intervals(net, k)
    return codec.resolve_conflicts(net)


def eval_windows(net, corpus, l_in, l_out, slide):
    """Evaluation windows: single stream, boundary-respecting."""
    cfg = TrainConfig(batch_size=1, slide=slide)
    batches = segment(net, corpus, cfg, l_in, l_out)
    return [s for batch in batches for s in batch]


# ----------------------------------------------------------------------
# commands

def cmd_network_build(args):
    net, report = build_network(args.nodes, args.edges, args.k)
    if args.out:
        network.save_labeled_edges_csv(net, args.out)
    print(f"nodes: {len(net.nodes)}")
    print(f"edges: {len(net.edges)}")
    print(f"revised_edges: {len(report.revisions)}")
    print(f"revision_rate: {report.revision_rate:.6f}")
    if args.out:
        print(f"labeled edges written to {args.out}")
    return 0


def cmd_network_stats(args):
    net, report = build_network(args.nodes, args.edges, args.k)
    degrees = [len(net.out_adjacency[n.id]) for n in net.nodes]
    hist = {}
    for d in degrees:
        hist[d] = hist.get(d, 0) + 1
    print(f"nodes: {len(net.nodes)}")
    print(f"edges: {len(net.edges)}")
    print(f"revised_edges: {len(report.revisions)}")
    print(f"revision_rate: {report.revision_rate:.6f}")
    print("out_degree_histogram: " +
          " ".join(f"{d}:{hist[d]}" for d in sorted(hist)))
    return 0


def cmd_synth(args):
    spec = synth.SynthSpec(
        topology=args.topology,
        width=args.width, height=args.height,
        n_nodes=args.n_nodes, avg_degree=args.avg_degree,
        heading_jitter=args.heading_jitter,
        routing_rule=args.rule, straight_bias=args.bias_p,
        rule_seed=args.rule_seed,
        n_trajectories=args.n_trajectories, traj_length=args.traj_length,
        length_jitter=args.length_jitter, n_drivers=args.n_drivers,
        seed=args.seed if args.seed is not None else 0,
    ).validate()
    net = synth.gen_network(spec)
    codec.assign_intervals(net, args.k)
    _, report = codec.resolve_conflicts(net)
    corpus = synth.gen_corpus(net, spec)
    os.makedirs(args.out_dir, exist_ok=True)
    nodes_path = os.path.join(args.out_dir, "nodes.csv")
    edges_path = os.path.join(args.out_dir, "edges.csv")
    traj_path = os.path.join(args.out_dir, "trajectories.txt")
    network.save_network_csv(net, nodes_path, edges_path)
    codec.save_trajectory_file(traj_path, corpus, net)
    print(f"nodes: {len(net.nodes)}")
    print(f"edges: {len(net.edges)}")
    print(f"revision_rate: {report.revision_rate:.6f}")
    print(f"trajectories: {len(corpus)}")
    print(f"written to {args.out_dir}")
    return 0


def cmd_encode(args):
    net, _ = build_network(args.nodes, args.edges, args.k)
    corpus = codec.load_trajectory_file(args.trajectories, net)
    with open(args.out, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("traj_id,time_slot,weather,driver_id,nodes,directions\n")
        for traj in corpus:
            nodes_field = " ".join(str(n) for n in traj.nodes)
            dirs_field = " ".join(str(r) for r in traj.directions)
            ctx = traj.context
            fh.write(
                f"{traj.traj_id},{ctx.time_slot},{ctx.weather},{ctx.driver_id},"
                f"{nodes_field},{dirs_field}\n"
            )
    print(f"encoded {len(corpus)} trajectories to {args.out}")
    return 0


def cmd_train(args):
    values = merged_settings(args)
    k = values.get("k", 8)
    net, _ = build_network(args.nodes, args.edges, k)
    corpus = codec.load_trajectory_file(args.trajectories, net)
    driver_vocab = values.get(
        "driver_vocab", max(t.context.driver_id for t in corpus) + 1
    )
    model_cfg = make_model_config(values, len(net.nodes), driver_vocab)
    train_cfg = make_train_config(values)

    val_samples = None
    if args.val_trajectories:
        val_corpus = codec.load_trajectory_file(args.val_trajectories, net)
        val_samples = eval_windows(
            net, val_corpus, model_cfg.l_in, model_cfg.l_out, train_cfg.slide
        )

    def progress(log):
        amr = "" if log.val_amr is None else f" val_AMR={log.val_amr:.3f}"
        print(f"epoch {log.epoch}: loss={log.loss:.6f} lr={log.lr:.6f} "
              f"alpha={log.alpha:.3f}{amr}")

    train(net, corpus, model_cfg, train_cfg,
          val_samples=val_samples, out_dir=args.out_dir, log_hook=progress)
    print(f"artifacts written to {args.out_dir}")
    return 0


def _load_model_and_windows(args, slide):
    ckpt_cfg = read_checkpoint_config(args.checkpoint)
    net, _ = build_network(args.nodes, args.edges, ckpt_cfg.K)
    model = load_checkpoint(args.checkpoint, net)
    cfg = model.config
    corpus = codec.load_trajectory_file(args.trajectories, net)
    samples = eval_windows(net, corpus, cfg.l_in, cfg.l_out, slide)
    return model, samples


def _write_window_file(path, rows):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for wid, edge_ids in rows:
            fh.write(f"{wid},{' '.join(str(e) for e in edge_ids)}\n")


def read_window_file(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            head, _, tail = line.partition(",")
            try:
                wid = int(head)
                edges = [int(tok) for tok in tail.split()] if tail.strip() else []
            except ValueError:
                raise DataError(f"{path}:{line_no}: malformed window line") from None
            rows.append((wid, edges))
    return rows


def cmd_predict(args):
    model, samples = _load_model_and_windows(args, args.slide)
    masked = not args.unmasked
    pred_rows = []
    truth_rows = []
    for wid, s in enumerate(samples):
        res = model.predict(s.input_nodes, s.input_dirs, s.context, masked=masked)
        pred_rows.append((wid, res.edge_ids))
        truth_rows.append((wid, s.target_edges))
    os.makedirs(args.out_dir, exist_ok=True)
    _write_window_file(os.path.join(args.out_dir, "predictions.txt"), pred_rows)
    _write_window_file(os.path.join(args.out_dir, "truth.txt"), truth_rows)
    print(f"predicted {len(pred_rows)} windows to {args.out_dir}")
    return 0


def cmd_evaluate(args):
    pred_rows = read_window_file(args.predictions)
    truth_rows = read_window_file(args.truth)
    if [w for w, _ in pred_rows] != [w for w, _ in truth_rows]:
        raise DataError("prediction and truth window ids do not line up")
    preds = [e for _, e in pred_rows]
    truths = [e for _, e in truth_rows]
    report = compute_metrics(preds, truths)
    print(report.table())
    if args.out:
        with open(args.out, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(report.csv_header() + "\n")
            fh.write(report.csv_row() + "\n")
    if args.detail:
        ids = [w for w, _ in pred_rows]
        with open(args.detail, "w", newline="\n", encoding="utf-8") as fh:
            fh.write("traj_id,edit,matches\n")
            for tid, edit, matches in per_trajectory_detail(ids, preds, truths):
                fh.write(f"{tid},{edit},{matches}\n")
    return 0


def cmd_baseline_mc(args):
    net, _ = build_network(args.nodes, args.edges, args.k)
    train_corpus = codec.load_trajectory_file(args.train_trajectories, net)
    test_corpus = codec.load_trajectory_file(args.test_trajectories, net)
    mc = MarkovChainPredictor(net).fit(
        [codec.trajectory_edges(net, t) for t in train_corpus]
    )
    samples = eval_windows(net, test_corpus, args.l_in, args.l_out, args.slide)
    pred_rows = []
    truth_rows = []
    for wid, s in enumerate(samples):
        pred, _dead = mc.predict(s.input_edges, args.l_out)
        pred_rows.append((wid, pred))
        truth_rows.append((wid, s.target_edges))
    os.makedirs(args.out_dir, exist_ok=True)
    _write_window_file(os.path.join(args.out_dir, "predictions.txt"), pred_rows)
    _write_window_file(os.path.join(args.out_dir, "truth.txt"), truth_rows)
    print(f"markov baseline predicted {len(pred_rows)} windows to {args.out_dir}")
    return 0


def cmd_attn_dump(args):
    model, samples = _load_model_and_windows(args, args.slide)
    if args.limit is not None:
        samples = samples[: args.limit]
    cfg = model.config
    os.makedirs(args.out_dir, exist_ok=True)
    spatial_path = os.path.join(args.out_dir, "spatial.csv")
    temporal_path = os.path.join(args.out_dir, "temporal.csv")
    with open(spatial_path, "w", newline="\n", encoding="utf-8") as sp, \
            open(temporal_path, "w", newline="\n", encoding="utf-8") as tp:
        sp.write("window_id,phase,step,node,neighbor,weight\n")
        tp.write("window_id,out_step," +
                 ",".join(f"w{j}" for j in range(1, cfg.l_in + 1)) + "\n")
        for wid, s in enumerate(samples):
            res = model.predict(
                s.input_nodes, s.input_dirs, s.context,
                masked=True, collect_attention=True,
            )
            for phase, step, node, pairs in res.spatial_attention:
                for neighbor, weight in pairs:
                    sp.write(f"{wid},{phase},{step},{node},{neighbor},{weight:.8f}\n")
            if res.temporal_attention is not None:
                for step, row in enumerate(res.temporal_attention, start=1):
                    vals = ",".join(f"{w:.8f}" for w in row)
                    tp.write(f"{wid},{step},{vals}\n")
    print(f"attention dumps written to {args.out_dir}")
    return 0


# ----------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="roadtraj",
                     description="Direction-based trajectory prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_net = sub.add_parser("network", help="road network tools")
    net_sub = p_net.add_subparsers(dest="net_command", required=True)
    for name, fn in (("build", cmd_network_build), ("stats", cmd_network_stats)):
        p = net_sub.add_parser(name)
        p.add_argument("--nodes", required=True)
        p.add_argument("--edges", required=True)
        p.add_argument("--k", type=int, default=8)
        if name == "build":
            p.add_argument("--out", help="write labeled edges CSV here")
        p.set_defaults(func=fn)

    p = sub.add_parser("synth", help="generate a synthetic network and corpus")
    p.add_argument("--topology", choices=synth.TOPOLOGIES, default="grid")
    p.add_argument("--width", type=int, default=5)
    p.add_argument("--height", type=int, default=5)
    p.add_argument("--n-nodes", type=int, default=100)
    p.add_argument("--avg-degree", type=float, default=3.0)
    p.add_argument("--heading-jitter", type=float, default=20.0)
    p.add_argument("--rule", choices=synth.ROUTING_RULES, default="uniform-random")
    p.add_argument("--bias-p", type=float, default=0.8)
    p.add_argument("--rule-seed", type=int, default=7)
    p.add_argument("--n-trajectories", type=int, default=100)
    p.add_argument("--traj-length", type=int, default=20)
    p.add_argument("--length-jitter", type=int, default=0)
    p.add_argument("--n-drivers", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="encode trajectories to node/direction form")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--val-trajectories")
    p.add_argument("--out-dir", required=True)
    _add_hyper_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="greedy-decode test windows")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--slide", type=int, default=5)
    p.add_argument("--unmasked", action="store_true",
                   help="allow predicting labels with no matching edge")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="write the report as CSV")
    p.add_argument("--detail", help="write per-window edit/match detail CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline-mc", help="first-order markov baseline")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--train-trajectories", required=True)
    p.add_argument("--test-trajectories", required=True)
    p.add_argument("--l-in", type=int, default=10)
    p.add_argument("--l-out", type=int, default=5)
    p.add_argument("--slide", type=int, default=5)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_baseline_mc)

    p = sub.add_parser("attn-dump", help="export attention weights as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--slide", type=int, default=5)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=cmd_attn_dump)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except RoadTrajError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
