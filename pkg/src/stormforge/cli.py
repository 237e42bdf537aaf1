"""Command-line frontend.

Subcommands: ``render`` composes a rainy image from a params file for visual
debugging, ``attack`` runs a configured dataset attack, ``report`` aggregates
a results file into tables and plots, and ``scorer-check`` validates a remote
scorer against the wire-protocol schema.

Exit codes: 0 ok, 2 config error, 3 scorer unreachable or non-conformant.
"""

from __future__ import annotations

import argparse
import base64
import importlib.resources
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_run_config
from .illumination import IlluminationParams, LightSource, gain_map, gain_stats
from .image import apply_gain, blend, encode_png, load_png, save_png
from .rain import rain_to_image, render_rain
from .runner import DatasetError, run_dataset
from .scorer import ScorerError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCORER = 3


def load_protocol_schema() -> dict:
    text = (
        importlib.resources.files("stormforge")
        .joinpath("schemas/scorer_protocol.json")
        .read_text()
    )
    return json.loads(text)


def cmd_render(args) -> int:
    from .config import _rain_params  # shared field-precise validation

    try:
        raw = json.loads(Path(args.params).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read params file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rain = _rain_params(raw.get("rain", {}), "params.rain")
        light_raw = raw.get("illumination", {})
        sources = tuple(
            LightSource(float(s["x"]), float(s["y"]), float(s["strength"]), float(s["radius"]))
            for s in light_raw.get("sources", [])
        ) or (LightSource(0.5, 0.5, 0.0, 0.3),)
        light = IlluminationParams(
            sources=sources,
            mix=float(light_raw.get("mix", 0.5)),
            gain_ref=float(light_raw.get("gain_ref", 1.0)),
            gain_threshold=float(light_raw.get("gain_threshold", 1.5)),
        )
        mix_weight = float(raw.get("mix_weight", 0.3))
        if not 0.0 <= mix_weight <= 1.0:
            raise ConfigError("params.mix_weight: must lie in [0, 1]")
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid params: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        img = load_png(args.input)
    except Exception as exc:
        print(f"error: cannot load input image: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    h, w = img.shape[:2]
    layer = render_rain(rain, h, w)
    rained = blend(img, rain_to_image(layer), mix_weight)
    gain = gain_map(light, h, w)
    composed = apply_gain(rained, gain)
    save_png(composed, args.output)

    mean_gain, max_gain = gain_stats(gain)
    coverage = float((layer > 0.0).mean())
    print(f"mean_gain={mean_gain:.6f} max_gain={max_gain:.6f} rain_coverage={coverage:.6f}")
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_attack(args) -> int:
    overrides = {}
    if args.out:
        overrides["output"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        config = load_run_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = run_dataset(config)
    except DatasetError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScorerError as exc:
        print(f"scorer error: {exc}", file=sys.stderr)
        return EXIT_SCORER
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import write_report

    results = Path(args.results)
    if not results.is_file():
        print(f"config error: results file {results} does not exist", file=sys.stderr)
        return EXIT_CONFIG
    summary = write_report(results, args.out)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_scorer_check(args) -> int:
    import jsonschema
    import requests

    schema = load_protocol_schema()
    endpoint = args.endpoint.rstrip("/")
    labels = args.labels.split(",") if args.labels else ["probe-a", "probe-b"]

    def validate(body: dict, definition: str) -> None:
        jsonschema.validate(
            body, {**schema["definitions"][definition], "definitions": schema["definitions"]}
        )

    try:
        resp = requests.post(
            endpoint + "/session",
            json={"labels": labels, "prompt_template": args.prompt_template},
            timeout=args.timeout,
        )
    except requests.RequestException as exc:
        print(f"scorer unreachable: {exc}", file=sys.stderr)
        return EXIT_SCORER
    try:
        if resp.status_code != 200:
            raise ValueError(f"/session returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        validate(body, "session_response")
        session = body["session"]

        probe = np.full((16, 16, 3), 0.5)
        png_b64 = base64.b64encode(encode_png(probe)).decode("ascii")
        resp = requests.post(
            endpoint + "/score",
            json={"session": session, "image_png_b64": png_b64},
            timeout=args.timeout,
        )
        if resp.status_code != 200:
            raise ValueError(f"/score returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        validate(body, "score_response")
        if len(body["scores"]) != len(labels):
            raise ValueError(
                f"/score returned {len(body['scores'])} scores for {len(labels)} labels"
            )

        resp = requests.post(
            endpoint + "/features", json={"image_png_b64": png_b64}, timeout=args.timeout
        )
        if resp.status_code != 200:
            raise ValueError(f"/features returned {resp.status_code}: {resp.text[:200]}")
        validate(resp.json(), "features_response")
    except (ValueError, jsonschema.ValidationError, requests.RequestException) as exc:
        print(f"protocol check failed: {exc}", file=sys.stderr)
        return EXIT_SCORER

    print(f"scorer at {endpoint} conforms to the wire protocol")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stormforge",
        description="rainy-weather black-box attacks on image-text similarity models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="compose a rainy image from a params file")
    p.add_argument("--params", required=True, help="JSON file with rain/illumination params")
    p.add_argument("--input", required=True, help="input PNG")
    p.add_argument("--output", required=True, help="output PNG")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("attack", help="run a configured dataset attack")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--workers", type=int, help="override worker count")
    p.add_argument("--seed", type=int, help="override global seed")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="aggregate results JSONL into tables and plots")
    p.add_argument("--results", required=True, help="results.jsonl from an attack run")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("scorer-check", help="validate a remote scorer against the protocol")
    p.add_argument("--endpoint", required=True, help="scorer base URL")
    p.add_argument("--labels", help="comma-separated probe labels")
    p.add_argument("--prompt-template", default="a photo of a {}")
    p.add_argument("--timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_scorer_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
