"""Command line interface.

Local commands (synth/train/eval/detect) operate on PLY/JSON corpora and
checkpoints; `serve` starts the HTTP service; the `client` group is a thin
HTTP client against a running service.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _parse_milestones(text):
    if not text:
        return ()
    out = []
    for part in text.split(","):
        epoch, factor = part.split(":")
        out.append((int(epoch), float(factor)))
    return tuple(out)


def cmd_synth(args):
    from .training import SceneSpec, synth_corpus
    spec = SceneSpec(noise_sigma=args.noise, clutter_count=args.clutter)
    corpus = synth_corpus(args.count, args.seed, spec=spec, directory=args.out,
                          negative_fraction=args.negative_fraction)
    print(json.dumps({"generated": len(corpus), "directory": str(args.out)}))


def cmd_train(args):
    from .augment import load_corpus
    from .network import default_config, reduced_config, save_checkpoint
    from .training import TrainConfig, split_dataset, train, DatasetSplit

    corpus = load_corpus(args.data)
    if not corpus:
        sys.exit(f"no PLY/JSON pairs found in {args.data}")
    if args.train_count and 0 < args.train_count < len(corpus):
        split = split_dataset(corpus, args.train_count, args.seed)
    else:
        split = DatasetSplit([lc.cloud_id for lc in corpus], [])
    net_config = (reduced_config(args.seed) if args.net == "reduced"
                  else default_config(args.seed))
    train_config = TrainConfig(epochs=args.epochs, batch_size=args.batch,
                               base_lr=args.lr,
                               lr_milestones=_parse_milestones(args.milestones),
                               subsample_n=args.subsample, seed=args.seed)
    out_dir = Path(args.out).parent / (Path(args.out).stem + "_run")
    model, history = train(corpus, split, net_config, train_config,
                           out_dir=out_dir,
                           log=lambda e: print(json.dumps(e), file=sys.stderr))
    save_checkpoint(args.out, model, epoch=train_config.epochs, history=history)
    with open(out_dir / "history.json", "w") as f:
        json.dump(history, f, indent=2)
    print(json.dumps({"checkpoint": str(args.out), "run_dir": str(out_dir),
                      "final_loss": history[-1]["total"]}))


def cmd_eval(args):
    from .augment import load_corpus
    from .network import load_checkpoint
    from .training import evaluate

    corpus = load_corpus(args.data)
    model, _ = load_checkpoint(args.ckpt)
    metrics = evaluate(model, corpus, [lc.cloud_id for lc in corpus])
    print(json.dumps(metrics, indent=2))
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out_dir) / "metrics.json", "w") as f:
            json.dump(metrics, f, indent=2)


def cmd_detect(args):
    from .clouds import load_ply
    from .network import load_checkpoint, timed_detect

    model, _ = load_checkpoint(args.ckpt)
    cloud = load_ply(args.cloud)
    box, score, ms = timed_detect(cloud, model)
    print(json.dumps({
        "center": [float(v) for v in box.center],
        "size": [float(v) for v in box.size],
        "yaw": float(box.yaw),
        "score": float(score),
        "inference_ms": ms,
    }, indent=2))


def cmd_serve(args):
    import uvicorn
    from .service import create_app

    port = int(os.environ.get("ARCAL_PORT", args.port))
    data_dir = os.environ.get("ARCAL_DATA", args.data)
    app = create_app(data_dir, model_path=args.ckpt, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=port)


def _client(args):
    import httpx
    return httpx.Client(base_url=args.server, timeout=120.0)


def cmd_client_upload(args):
    with _client(args) as client:
        resp = client.post("/clouds", content=Path(args.cloud).read_bytes())
        resp.raise_for_status()
        print(resp.text)


def cmd_client_detect(args):
    with _client(args) as client:
        resp = client.post("/detect", json={"cloud_id": args.cloud_id})
        resp.raise_for_status()
        print(resp.text)


def cmd_client_annotate(args):
    corners = [[float(x) for x in corner.split(",")] for corner in args.corner]
    with _client(args) as client:
        resp = client.post("/annotate/box", json={
            "cloud_id": args.cloud_id, "corners": corners,
            "height_threshold": args.height_threshold})
        resp.raise_for_status()
        print(resp.text)


def cmd_client_calibrate(args):
    robot_in_map = json.loads(Path(args.robot_in_map).read_text())
    with _client(args) as client:
        resp = client.post("/calibrate", json={
            "robot_in_map": robot_in_map, "cloud_id": args.cloud_id})
        resp.raise_for_status()
        print(resp.text)


def build_parser():
    parser = argparse.ArgumentParser(prog="arcal",
                                     description="AR-robot calibration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic labeled scenes")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--clutter", type=int, default=3)
    p.add_argument("--negative-fraction", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a detector on a labeled corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=480)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--milestones", default="200:0.1,400:0.1")
    p.add_argument("--subsample", type=int, default=25000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--net", choices=("full", "reduced"), default="full")
    p.add_argument("--train-count", type=int, default=0,
                   help="train/test split size; 0 = train on everything")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="run detection on one PLY file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cloud", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("serve", help="start the calibration service")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", default="./arcal_data")
    p.add_argument("--ui-dir", default=None)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("client", help="thin client against a running service")
    client_sub = p.add_subparsers(dest="client_command", required=True)

    c = client_sub.add_parser("upload")
    c.add_argument("--server", required=True)
    c.add_argument("--cloud", required=True)
    c.set_defaults(func=cmd_client_upload)

    c = client_sub.add_parser("detect")
    c.add_argument("--server", required=True)
    c.add_argument("--cloud-id", required=True)
    c.set_defaults(func=cmd_client_detect)

    c = client_sub.add_parser("annotate")
    c.add_argument("--server", required=True)
    c.add_argument("--cloud-id", required=True)
    c.add_argument("--corner", action="append", required=True,
                   help="x,y,z (repeat 3 times; second corner is the shared one)")
    c.add_argument("--height-threshold", type=float, default=1.0)
    c.set_defaults(func=cmd_client_annotate)

    c = client_sub.add_parser("calibrate")
    c.add_argument("--server", required=True)
    c.add_argument("--cloud-id", required=True)
    c.add_argument("--robot-in-map", required=True,
                   help="path to a transform JSON file")
    c.set_defaults(func=cmd_client_calibrate)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
