"""Command-line interface: data generation, training, evaluation, one-shot
inference, and the HTTP server.

Results go to stdout as a single JSON document; failures go to stderr as
{"error", "message"}. Exit codes: 0 success, 2 usage error (argparse),
1 anything that failed at runtime.
"""

import argparse
import json
import os
import sys

from . import errors, inference, scenegen, service, trainer
from .checkpoint import load_checkpoint
from .trainer import TrainConfig


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="newvision",
        description="desk-scale multimodal assistant toolkit")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scene corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--eval", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", required=True, choices=trainer.STAGES)
    p.add_argument("--config", required=True,
                   help="JSON file of training settings")

    p = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="train")

    p = sub.add_parser("caption", help="caption one PPM image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)

    p = sub.add_parser("vqa", help="answer a question about one PPM image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--question", required=True)

    p = sub.add_parser("serve", help="start the HTTP/JSON service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--world", default=None)
    p.add_argument("--port", type=int, default=8765)
    return parser


def _cmd_gen_data(args) -> dict:
    return scenegen.build_corpus(args.out, n_train=args.train,
                                 n_eval=args.eval, seed=args.seed)


def _cmd_train(args) -> dict:
    with open(args.config, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise errors.ConfigError("training config must be a JSON object")
    raw.pop("stage", None)
    try:
        config = TrainConfig(stage=args.stage, **raw)
    except TypeError as exc:
        raise errors.ConfigError(f"bad training config: {exc}")
    ckpt, logs = trainer.train(config)
    return {"stage": args.stage, "steps": len(logs), "final": logs[-1],
            "out": config.out, "checkpoint_step": ckpt.step}


def _cmd_eval(args) -> dict:
    ckpt = load_checkpoint(args.ckpt)
    return trainer.evaluate(ckpt, args.corpus, split=args.split)


def _cmd_caption(args) -> dict:
    ckpt = load_checkpoint(args.ckpt)
    image = scenegen.read_ppm(args.image)
    return {"caption": inference.caption_image(image, ckpt)}


def _cmd_vqa(args) -> dict:
    ckpt = load_checkpoint(args.ckpt)
    image = scenegen.read_ppm(args.image)
    return {"answer": inference.answer_question(image, args.question, ckpt)}


def _cmd_serve(args) -> dict:
    port = args.port
    env_port = os.environ.get("NEWVISION_PORT")
    if env_port is not None:
        try:
            port = int(env_port)
        except ValueError:
            raise errors.ConfigError(
                f"NEWVISION_PORT={env_port!r} is not an integer")
    server = service.create_server(args.ckpt, world_path=args.world,
                                   port=port)
    host, bound = server.server_address[:2]
    print(json.dumps({"serving": f"http://{host}:{bound}/",
                      "port": bound}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return {"stopped": True}


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "caption": _cmd_caption,
    "vqa": _cmd_vqa,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        result = _COMMANDS[args.cmd](args)
    except (errors.NewvisionError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
