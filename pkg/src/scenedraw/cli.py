"""Command line client for the scenedraw service.

Subcommands: generate, replay, check, eval, serve. By default handlers run
in-process; with --server the same payloads are posted to a running
instance. Exit codes: 0 success, 1 strict-check violations, 2 failed run
with partial transcript, 3 bad flags or configuration.
"""

from __future__ import annotations

import base64
import json
import sys
from pathlib import Path

import click

from . import service

EXIT_OK = 0
EXIT_STRICT = 1
EXIT_FAILED = 2
EXIT_CONFIG = 3


class _Remote:
    def __init__(self, base_url: str):
        self.base_url = base_url.rstrip("/")

    def post(self, path: str, payload: dict) -> dict:
        import httpx

        resp = httpx.post(f"{self.base_url}{path}", json=payload, timeout=600.0)
        resp.raise_for_status()
        return resp.json()


def _dispatch(server: str, path: str, model) -> dict:
    if server:
        return _Remote(server).post(path, model.model_dump())
    handler = {
        "/generate": service.handle_generate,
        "/replay": service.handle_replay,
        "/check": service.handle_check,
        "/eval": service.handle_eval,
    }[path]
    return handler(model).model_dump()


@click.group()
@click.option("--server", default="", help="Base URL of a running service; default runs in-process.")
@click.option("--output-dir", default=".", type=click.Path(), help="Directory for artifacts.")
@click.pass_context
def cli(ctx, server, output_dir):
    ctx.ensure_object(dict)
    ctx.obj["server"] = server
    ctx.obj["output_dir"] = Path(output_dir)


def _write_artifacts(out_dir: Path, stem: str, response: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{stem}.transcript.jsonl").write_text(response["transcript_jsonl"])
    if response.get("image_b64"):
        (out_dir / f"{stem}.png").write_bytes(base64.b64decode(response["image_b64"]))


@cli.command()
@click.option("--prompt", required=True, help="Prompt text.")
@click.option("--prompt-id", default="prompt")
@click.option("--mode", type=click.Choice(["auto", "free", "aware"]), default="auto")
@click.option("--mock/--no-mock", default=False, help="Offline run: mock painter, replay gateway, rule-based interpreter.")
@click.option("--record", "record_path", default=None, type=click.Path(), help="Record gateway fixtures to this file.")
@click.option("--fixtures", "fixtures_path", default=None, type=click.Path(), help="Replay gateway fixtures from this file.")
@click.option("--seed", default=0, type=int)
@click.option("--resolution", default=1024, type=int)
@click.option("--no-visual-context", is_flag=True, default=False)
@click.option("--no-checker", is_flag=True, default=False)
@click.option("--no-layout", is_flag=True, default=False, help="Force the layout-free path.")
@click.option("--name", default="out", help="Artifact file stem.")
@click.pass_context
def generate(ctx, prompt, prompt_id, mode, mock, record_path, fixtures_path, seed, resolution,
             no_visual_context, no_checker, no_layout, name):
    """Generate an image and a transcript for one prompt."""
    req = service.GenerateRequest(
        prompt_text=prompt,
        prompt_id=prompt_id,
        mode="free" if no_layout else mode,
        mock=mock,
        layout_aware=not no_layout,
        visual_context=not no_visual_context,
        checker=not no_checker,
        seed=seed,
        resolution=resolution,
        fixtures_path=fixtures_path,
        record_path=record_path,
    )
    response = _dispatch(ctx.obj["server"], "/generate", req)
    _write_artifacts(ctx.obj["output_dir"], name, response)
    click.echo(json.dumps({"status": response["status"], "counters": response["counters"],
                           "final_image_sha256": response["final_image_sha256"]}))
    if response["status"] != "ok":
        ctx.exit(EXIT_FAILED)


@cli.command()
@click.option("--trace", required=True, type=click.Path(exists=True), help="Transcript JSONL to replay.")
@click.option("--fixtures", "fixtures_path", default=None, type=click.Path())
@click.option("--name", default="replay", help="Artifact file stem.")
@click.pass_context
def replay(ctx, trace, fixtures_path, name):
    """Re-run a recorded transcript; deterministic with the mock painter."""
    req = service.ReplayRequest(
        transcript_jsonl=Path(trace).read_text(),
        fixtures_path=fixtures_path,
    )
    response = _dispatch(ctx.obj["server"], "/replay", req)
    _write_artifacts(ctx.obj["output_dir"], name, response)
    click.echo(json.dumps({"status": response["status"], "final_image_sha256": response["final_image_sha256"]}))
    if response["status"] != "ok":
        ctx.exit(EXIT_FAILED)


@cli.command()
@click.option("--layout", required=True, type=click.Path(exists=True), help="Layout JSON file to lint.")
@click.option("--plan", "plan_path", default=None, type=click.Path(exists=True), help="Optional plan JSON for relation checks.")
@click.option("--strict", is_flag=True, default=False, help="Exit 1 when violations are found.")
@click.option("--name", default="check", help="Artifact file stem.")
@click.pass_context
def check(ctx, layout, plan_path, strict, name):
    """Lint a standalone layout file and show violations plus repairs."""
    req = service.CheckRequest(
        layout=json.loads(Path(layout).read_text()),
        plan=json.loads(Path(plan_path).read_text()) if plan_path else None,
    )
    response = _dispatch(ctx.obj["server"], "/check", req)
    violations = response["violations"]
    if violations:
        click.echo(f"{len(violations)} violation(s):")
        for v in violations:
            subjects = ", ".join(v["subjects"])
            click.echo(f"  [{v['kind']}] {subjects}: measured {v['measured']:.4g} vs threshold {v['threshold']:.4g}")
    else:
        click.echo("no violations")
    out_dir = ctx.obj["output_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.report.json").write_text(json.dumps(response["report"], indent=2))
    if strict and violations:
        ctx.exit(EXIT_STRICT)


@cli.command("eval")
@click.option("--corpus", required=True, type=click.Path(exists=True), help="Directory of transcript JSONL files.")
@click.option("--name", default="eval", help="Artifact file stem.")
@click.pass_context
def eval_cmd(ctx, corpus, name):
    """Aggregate call statistics and layout metrics over a transcript corpus."""
    if ctx.obj["server"]:
        contents = [p.read_text() for p in sorted(Path(corpus).glob("*.jsonl"))]
        req = service.EvalRequest(transcripts_jsonl=contents)
    else:
        req = service.EvalRequest(corpus_dir=str(corpus))
    response = _dispatch(ctx.obj["server"], "/eval", req)
    out_dir = ctx.obj["output_dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{name}.stats.json").write_text(json.dumps(response["stats"], indent=2))
    (out_dir / f"{name}.stats.csv").write_text(response["csv"])
    click.echo(json.dumps(response["stats"], indent=2))


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run(service.app, host=host, port=port)


def run(argv) -> int:
    """Total argument handling: any argv yields an exit code, never a crash."""
    try:
        # non-standalone click surfaces ctx.exit(code) as a return value
        rv = cli.main(args=list(argv), standalone_mode=False, obj={})
        return rv if isinstance(rv, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except (click.UsageError, click.ClickException) as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        ctx = getattr(exc, "ctx", None)
        click.echo((ctx.get_help() if ctx else cli.get_help(click.Context(cli))), err=True)
        return EXIT_CONFIG
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_CONFIG
        return code
    except Exception as exc:  # config or IO problems, not crashes
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
