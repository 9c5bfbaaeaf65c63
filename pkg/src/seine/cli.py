"""Command-line entry point. Thin client over the HTTP service.

By default requests are served in-process (no server needed); pass
--server http://host:port to talk to a running instance instead. Every
command writes exactly one JSON document to stdout; logs go to stderr.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 runtime
failure (e.g. non-finite loss during training).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise SystemExit(_usage_error(f"--set expects key=value, got {item!r}"))
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _usage_error(msg):
    print(f"error: {msg}", file=sys.stderr)
    return 1


TRAIN_KEYS = ("embed_dim", "num_layers", "edge_mlp_hidden", "batch_size",
              "learning_rate", "l2_weight", "fanout", "max_steps",
              "eval_every", "patience", "norm_position", "use_edge_features",
              "val_fraction")
TRAIN_TYPES = {"learning_rate": float, "l2_weight": float, "val_fraction": float,
               "norm_position": str, "use_edge_features": str}


def build_parser():
    p = _Parser(prog="seine", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--server", help="base URL of a running service "
                                    "(default: run in-process)")
    p.add_argument("--seed", type=int,
                   default=int(os.environ.get("SEINE_SEED", "0")),
                   help="master seed (env fallback: SEINE_SEED)")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a calibrated synthetic graph")
    sp.add_argument("--config", help="flat key=value config file")
    sp.add_argument("--out", required=True, help="output .seineg path")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a SynthConfig key")

    bp = sub.add_parser("build-graph", help="build a graph from raw inputs")
    bp.add_argument("--mode", choices=("records", "edge-lists"),
                    default="records")
    bp.add_argument("--out", required=True)
    bp.add_argument("--records", help="interaction-record TSV (records mode)")
    bp.add_argument("--user-features", help="user feature TSV")
    bp.add_argument("--domain-features", help="domain feature TSV")
    bp.add_argument("--labels", help="label TSV")
    bp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a ConstructionRules key")
    bp.add_argument("--node-count", type=int, help="edge-lists mode")
    bp.add_argument("--relation", action="append", metavar="NAME=PATH",
                    help="edge-list file per relation (repeatable)")
    bp.add_argument("--features", help="node feature TSV (edge-lists mode)")
    bp.add_argument("--train-fraction", type=float, default=0.4)
    bp.add_argument("--val-fraction", type=float, default=0.1)

    ip = sub.add_parser("inspect", help="print graph statistics")
    ip.add_argument("--graph", required=True)

    tp = sub.add_parser("train", help="train a model")
    tp.add_argument("--graph", required=True)
    tp.add_argument("--out", required=True, help="checkpoint output path")
    tp.add_argument("--config", help="flat key=value config file")
    tp.add_argument("--history", help="write per-step JSONL history here")
    tp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a TrainConfig key")
    for key in TRAIN_KEYS:
        tp.add_argument(f"--{key}", type=TRAIN_TYPES.get(key, int),
                        dest=f"cfg_{key}", metavar="V")

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    ep.add_argument("--graph", required=True)
    ep.add_argument("--ckpt", required=True)
    ep.add_argument("--split", default="test", choices=("train", "val", "test"))
    ep.add_argument("--roc", action="store_true", help="include ROC points")

    scp = sub.add_parser("score", help="spam probabilities per user")
    scp.add_argument("--graph", required=True)
    scp.add_argument("--ckpt", required=True)
    scp.add_argument("--out", help="write TSV user_id<TAB>score here")
    scp.add_argument("--users", help="comma-separated dense user ids "
                                     "(default: all labeled)")

    emp = sub.add_parser("embed", help="final-layer embeddings per user")
    emp.add_argument("--graph", required=True)
    emp.add_argument("--ckpt", required=True)
    emp.add_argument("--out", help="write TSV user_id<TAB>v1<TAB>... here")
    emp.add_argument("--users", help="comma-separated dense user ids")
    return p


def _client(server):
    import httpx
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient
    from .service import app
    return TestClient(app)


def _post(client, path, payload):
    resp = client.post(path, json=payload)
    body = resp.json()
    if resp.status_code == 200:
        return 0, body
    code = 3 if resp.status_code >= 500 else 2
    print(f"error: {body.get('error', resp.text)}", file=sys.stderr)
    return code, body


def _user_list(arg):
    if arg is None:
        return None
    try:
        return [int(x) for x in arg.split(",") if x.strip()]
    except ValueError:
        raise SystemExit(_usage_error(f"bad --users list {arg!r}"))


def _write_tsv(path, users, rows):
    with open(path, "w", encoding="utf-8") as f:
        for uid, row in zip(users, rows):
            f.write(uid + "\t" + "\t".join(repr(v) for v in row) + "\n")


def run(argv) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    client = _client(args.server)

    if args.command == "synth":
        code, body = _post(client, "/synth", {
            "out_path": args.out, "config_path": args.config,
            "overrides": _parse_overrides(args.set), "seed": args.seed})
        if code == 0:
            print(json.dumps(body, sort_keys=True))
        return code

    if args.command == "build-graph":
        payload = {"mode": args.mode, "out_path": args.out, "seed": args.seed}
        if args.mode == "records":
            payload.update(records_path=args.records,
                           user_features_path=args.user_features,
                           domain_features_path=args.domain_features,
                           labels_path=args.labels,
                           rules_overrides=_parse_overrides(args.set))
        else:
            if args.node_count is None or not args.relation:
                return _usage_error(
                    "edge-lists mode needs --node-count and --relation")
            payload.update(node_count=args.node_count,
                           relation_files=dict(
                               r.split("=", 1) for r in args.relation),
                           labels_path=args.labels,
                           feature_file=args.features,
                           train_fraction=args.train_fraction,
                           val_fraction=args.val_fraction)
        code, body = _post(client, "/build-graph", payload)
        if code == 0:
            print(json.dumps(body, sort_keys=True))
        return code

    if args.command == "inspect":
        code, body = _post(client, "/inspect", {"graph_path": args.graph})
        if code == 0:
            print(json.dumps(body, sort_keys=True))
        return code

    if args.command == "train":
        overrides = _parse_overrides(args.set)
        for key in TRAIN_KEYS:
            val = getattr(args, f"cfg_{key}")
            if val is not None:
                overrides[key] = val
        code, body = _post(client, "/train", {
            "graph_path": args.graph, "checkpoint_path": args.out,
            "config_path": args.config, "overrides": overrides,
            "seed": args.seed, "history_path": args.history})
        if code == 0:
            print(json.dumps(body, sort_keys=True))
        return code

    if args.command == "eval":
        code, body = _post(client, "/eval", {
            "graph_path": args.graph, "checkpoint_path": args.ckpt,
            "split": args.split, "include_roc": args.roc})
        if code == 0:
            print(json.dumps(body, sort_keys=True))
        return code

    if args.command == "score":
        code, body = _post(client, "/score", {
            "graph_path": args.graph, "checkpoint_path": args.ckpt,
            "user_ids": _user_list(args.users)})
        if code == 0:
            if args.out:
                _write_tsv(args.out, body["users"],
                           [[s] for s in body["scores"]])
            print(json.dumps({"users_scored": len(body["users"]),
                              "out": args.out}, sort_keys=True))
        return code

    if args.command == "embed":
        code, body = _post(client, "/embed", {
            "graph_path": args.graph, "checkpoint_path": args.ckpt,
            "user_ids": _user_list(args.users)})
        if code == 0:
            if args.out:
                _write_tsv(args.out, body["users"], body["embeddings"])
            print(json.dumps({"users_embedded": len(body["users"]),
                              "dim": len(body["embeddings"][0])
                              if body["embeddings"] else 0,
                              "out": args.out}, sort_keys=True))
        return code

    return _usage_error(f"unknown command {args.command!r}")


def main():
    try:
        sys.exit(run(sys.argv[1:]))
    except SystemExit:
        raise
    except Exception as e:  # pragma: no cover - defensive
        print(f"error: {e}", file=sys.stderr)
        sys.exit(3)


if __name__ == "__main__":
    main()
