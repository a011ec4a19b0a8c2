"""Command-line entry point exposing the pipeline stages as subcommands.

Exit codes: 0 on success, 1 on a domain error (a structured JSON error line
is printed to standard error), 2 on usage errors. Every artifact is written
atomically (temp file in the target directory, then rename), and no output
embeds timestamps, so identical inputs reproduce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import evaluator, populator, template_builder
from .errors import CdmgenError, ProviderUnavailable
from .gateway import (
    HttpEmbeddingProvider,
    HttpProvider,
    MockEmbeddingProvider,
    MockProvider,
    ProviderConfig,
    synthesize_description,
)
from .knowledge_base import KnowledgeBase, embed_corpus, ingest_examples
from .populator import PopulationConfig, clean, populate
from .schema_index import load_schema_dir
from .template_builder import Template, build_template, flatten_examples

logger = logging.getLogger(__name__)

ENV_DEPTH = "CDMGEN_DEPTH"
ENV_MU = "CDMGEN_MU"
ENV_EPSILON = "CDMGEN_EPSILON"

SUMMARY_COLUMNS = (
    "group",
    "count",
    "syntactical_mean",
    "syntactical_stddev",
    "adherence_mean",
    "adherence_stddev",
    "coverage_mean",
    "coverage_stddev",
    "status",
)


def atomic_write_text(path, text: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=target.parent, prefix=f".{target.name}.", delete=False
    )
    try:
        with handle:
            handle.write(text)
        os.replace(handle.name, target)
    except BaseException:
        os.unlink(handle.name)
        raise


def write_json(path, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, ensure_ascii=False) + "\n")


def _setting(flag_value, env_var: str, config_value, default, cast):
    """Configuration precedence: flag > environment > config file > default."""
    if flag_value is not None:
        return cast(flag_value)
    env = os.environ.get(env_var)
    if env is not None and env != "":
        return cast(env)
    if config_value is not None:
        return cast(config_value)
    return default


# ---------------------------------------------------------------------------
# provider construction


def _add_provider_flags(sub: argparse.ArgumentParser) -> None:
    group = sub.add_argument_group("provider")
    group.add_argument("--provider", help="chat-completion endpoint URL")
    group.add_argument("--model", default="default", help="model name sent to the provider")
    group.add_argument(
        "--credential-env",
        default="",
        help="environment variable holding the provider credential",
    )
    group.add_argument("--timeout", type=float, default=30.0)
    group.add_argument(
        "--provider-retries", type=int, default=2, help="transport retry limit"
    )
    group.add_argument(
        "--mock-script",
        help="JSON file mapping prompt hashes to scripted responses; replaces the provider",
    )


def _make_gateway(args, parser: argparse.ArgumentParser):
    if args.mock_script:
        return MockProvider.from_file(args.mock_script)
    if args.provider:
        return HttpProvider(
            ProviderConfig(
                endpoint=args.provider,
                model_name=args.model,
                credential_ref=args.credential_env,
                timeout=args.timeout,
                retry_limit=args.provider_retries,
            )
        )
    parser.error("a provider is required: pass --provider URL or --mock-script FILE")


# ---------------------------------------------------------------------------
# subcommands


def cmd_make_template(args, parser) -> int:
    index = load_schema_dir(args.schema_dir, args.root)
    keys = flatten_examples(args.examples)
    template = build_template(index, keys, args.contract_type)
    atomic_write_text(args.out, template.to_text())
    stats = template_builder.template_stats(template)
    logger.info(
        "template written out=%s leaves=%d depth=%d",
        args.out,
        stats["leaf_count"],
        stats["max_depth"],
    )
    return 0


def cmd_ingest_kb(args, parser) -> int:
    kb = ingest_examples(args.examples, args.contract_type, args.budget)
    if args.embed:
        if args.mock_embedder:
            provider = MockEmbeddingProvider()
        elif args.provider:
            provider = HttpEmbeddingProvider(
                ProviderConfig(
                    endpoint=args.provider,
                    model_name=args.model,
                    credential_ref=args.credential_env,
                    timeout=args.timeout,
                    retry_limit=args.provider_retries,
                )
            )
        else:
            parser.error("--embed requires --provider URL or --mock-embedder")
        kb = embed_corpus(kb, provider)
    kb.save(args.out)
    logger.info("knowledge base written out=%s chunks=%d", args.out, len(kb.chunks))
    return 0


def _population_config(args, config: Optional[dict] = None) -> PopulationConfig:
    config = config or {}
    return PopulationConfig(
        depth_threshold=_setting(
            args.depth, ENV_DEPTH, config.get("depth_threshold"), populator.DEFAULT_DEPTH_THRESHOLD, int
        ),
        use_rag=bool(args.rag if args.rag is not None else config.get("use_rag", False)),
        retry_limit=args.retries if args.retries is not None else config.get("retry_limit", 2),
        k_chunks=args.k_chunks if args.k_chunks is not None else config.get("k_chunks", 3),
        max_inflight=args.max_inflight
        if args.max_inflight is not None
        else config.get("max_inflight", 4),
    )


def cmd_populate(args, parser) -> int:
    if args.rag and not args.kb:
        parser.error("--rag requires --kb FILE")
    gateway = _make_gateway(args, parser)
    template = Template.load(args.template)
    contract_text = Path(args.contract).read_text(encoding="utf-8")
    kb = KnowledgeBase.load(args.kb) if args.kb else None
    cfg = _population_config(args)
    try:
        doc = populate(template, contract_text, kb, gateway, cfg)
    except ProviderUnavailable as exc:
        if args.provenance:
            write_json(args.provenance, exc.provenance)
        raise
    write_json(args.out, clean(doc))
    if args.provenance:
        write_json(args.provenance, doc.provenance)
    failed = sorted(
        path for path, record in doc.provenance.items() if record.get("failed")
    )
    if failed:
        print(
            json.dumps(
                {"error": "PopulationIncomplete", "detail": f"tasks failed: {', '.join(failed)}"}
            ),
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_baseline(args, parser) -> int:
    if args.rag and not args.kb:
        parser.error("--rag requires --kb FILE")
    gateway = _make_gateway(args, parser)
    contract_text = Path(args.contract).read_text(encoding="utf-8")
    kb = KnowledgeBase.load(args.kb) if args.kb else None
    cfg = _population_config(args)
    result = populator.baseline_generate(contract_text, kb, gateway, cfg)
    write_json(args.out, result)
    return 0


def cmd_synthesize(args, parser) -> int:
    gateway = _make_gateway(args, parser)
    example = json.loads(Path(args.example).read_text(encoding="utf-8"))
    references = [Path(p).read_text(encoding="utf-8") for p in args.reference]
    text = synthesize_description(gateway, example, references)
    atomic_write_text(args.out, text if text.endswith("\n") else text + "\n")
    return 0


def cmd_evaluate(args, parser) -> int:
    index = load_schema_dir(args.schema_dir, args.root)
    doc = json.loads(Path(args.cdm).read_text(encoding="utf-8"))
    report = evaluator.evaluate_document(doc, index)
    if args.coverage:
        gateway = _make_gateway(args, parser)
        contract_text = Path(args.contract).read_text(encoding="utf-8")
        lists = evaluator.coverage_lists(contract_text, doc, gateway)
        weights = evaluator.CoverageWeights(
            mu=_setting(args.mu, ENV_MU, None, evaluator.DEFAULT_MU, float),
            epsilon=_setting(args.epsilon, ENV_EPSILON, None, evaluator.DEFAULT_EPSILON, float),
        )
        report.lists = lists
        report.coverage_score = evaluator.coverage_score(lists, weights)
    envelope = {"contract_type": args.contract_type, **report.to_dict()}
    write_json(args.out, envelope)
    return 0


def _summary_rows(groups: dict[str, list], failures: list[tuple[str, str]]) -> list[list]:
    rows = []
    stats = evaluator.aggregate(groups) if groups else {}
    ordered = sorted(key for key in stats if key != "combined")
    if "combined" in stats:
        ordered.append("combined")
    for group in ordered:
        row = stats[group]

        def cell(metric: str, kind: str) -> str:
            data = row.get(metric)
            if not data:
                return ""
            return f"{data[kind]:.4f}"

        rows.append(
            [
                group,
                str(row["count"]["n"]),
                cell("syntactical_correctness", "mean"),
                cell("syntactical_correctness", "stddev"),
                cell("schema_adherence", "mean"),
                cell("schema_adherence", "stddev"),
                cell("coverage_score", "mean"),
                cell("coverage_score", "stddev"),
                "ok",
            ]
        )
    for name, detail in sorted(failures):
        rows.append([name, "0", "", "", "", "", "", "", f"failed: {detail}"])
    return rows


def _write_summary(path, rows: list[list]) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", newline="", dir=target.parent, prefix=f".{target.name}.", delete=False
    )
    try:
        with handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(SUMMARY_COLUMNS)
            writer.writerows(rows)
        os.replace(handle.name, target)
    except BaseException:
        os.unlink(handle.name)
        raise


def cmd_report(args, parser) -> int:
    report_dir = Path(args.input)
    files = sorted(report_dir.glob("*.json"))
    if not files:
        parser.error(f"no report files found in {report_dir}")
    groups: dict[str, list] = {}
    for file in files:
        envelope = json.loads(file.read_text(encoding="utf-8"))
        group = envelope.get("contract_type") or "unknown"
        groups.setdefault(group, []).append(evaluator.EvaluationReport.from_dict(envelope))
    _write_summary(args.out, _summary_rows(groups, []))
    return 0


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class ContractJob:
    name: str
    contract_type: str
    contract_path: Path
    examples_dir: Path
    kb_path: Optional[Path] = None


@dataclass
class RunConfig:
    """Batch run configuration, read from a JSON file.

    Paths are resolved relative to the config file's directory; every
    referenced input must exist when the command starts.
    """

    schema_dir: Path
    root_file: str
    out_dir: Path
    contracts: list[ContractJob]
    depth_threshold: Optional[int] = None
    mu: Optional[float] = None
    epsilon: Optional[float] = None
    use_rag: bool = False
    retry_limit: int = 2
    k_chunks: int = 3
    max_inflight: int = 4
    coverage: bool = False
    mock_script: Optional[Path] = None
    provider: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        config_path = Path(path)
        payload = json.loads(config_path.read_text(encoding="utf-8"))
        base = config_path.parent

        def resolve(value) -> Path:
            p = Path(value)
            return p if p.is_absolute() else base / p

        contracts = [
            ContractJob(
                name=str(entry.get("name") or Path(entry["contract_path"]).stem),
                contract_type=entry["contract_type"],
                contract_path=resolve(entry["contract_path"]),
                examples_dir=resolve(entry["examples_dir"]),
                kb_path=resolve(entry["kb_path"]) if entry.get("kb_path") else None,
            )
            for entry in payload.get("contracts", [])
        ]
        return cls(
            schema_dir=resolve(payload["schema_dir"]),
            root_file=payload["root_file"],
            out_dir=resolve(payload.get("out_dir", "pipeline-out")),
            contracts=contracts,
            depth_threshold=payload.get("depth_threshold"),
            mu=payload.get("mu"),
            epsilon=payload.get("epsilon"),
            use_rag=bool(payload.get("use_rag", False)),
            retry_limit=int(payload.get("retry_limit", 2)),
            k_chunks=int(payload.get("k_chunks", 3)),
            max_inflight=int(payload.get("max_inflight", 4)),
            coverage=bool(payload.get("coverage", False)),
            mock_script=resolve(payload["mock_script"]) if payload.get("mock_script") else None,
            provider=dict(payload.get("provider", {})),
        )

    def validate(self, parser: argparse.ArgumentParser) -> None:
        if not self.contracts:
            parser.error("pipeline config lists no contracts")
        if not self.schema_dir.is_dir():
            parser.error(f"schema_dir does not exist: {self.schema_dir}")
        if not (self.schema_dir / self.root_file).is_file():
            parser.error(f"root schema file does not exist: {self.schema_dir / self.root_file}")
        for job in self.contracts:
            if not job.contract_path.is_file():
                parser.error(f"contract file does not exist: {job.contract_path}")
            if not job.examples_dir.is_dir():
                parser.error(f"examples dir does not exist: {job.examples_dir}")
            if job.kb_path and not job.kb_path.is_file():
                parser.error(f"knowledge base does not exist: {job.kb_path}")


def cmd_pipeline(args, parser) -> int:
    run = RunConfig.from_file(args.config)
    if args.out_dir:
        run.out_dir = Path(args.out_dir)
    if args.mock_script:
        run.mock_script = Path(args.mock_script)
    run.validate(parser)

    if run.mock_script:
        gateway = MockProvider.from_file(run.mock_script)
    elif run.provider.get("endpoint"):
        gateway = HttpProvider(
            ProviderConfig(
                endpoint=run.provider["endpoint"],
                model_name=run.provider.get("model", "default"),
                credential_ref=run.provider.get("credential_env", ""),
                timeout=float(run.provider.get("timeout", 30.0)),
                retry_limit=int(run.provider.get("retries", 2)),
            )
        )
    else:
        parser.error("pipeline needs a provider endpoint or a mock script")

    depth = _setting(args.depth, ENV_DEPTH, run.depth_threshold, populator.DEFAULT_DEPTH_THRESHOLD, int)
    mu = _setting(args.mu, ENV_MU, run.mu, evaluator.DEFAULT_MU, float)
    eps = _setting(args.epsilon, ENV_EPSILON, run.epsilon, evaluator.DEFAULT_EPSILON, float)
    weights = evaluator.CoverageWeights(mu=mu, epsilon=eps)
    cfg = PopulationConfig(
        depth_threshold=depth,
        use_rag=run.use_rag,
        retry_limit=run.retry_limit,
        k_chunks=run.k_chunks,
        max_inflight=run.max_inflight,
    )

    index = load_schema_dir(run.schema_dir, run.root_file)
    out_dir = run.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    groups: dict[str, list] = {}
    failures: list[tuple[str, str]] = []
    for job in run.contracts:
        logger.info("pipeline contract=%s type=%s", job.name, job.contract_type)
        try:
            keys = flatten_examples(job.examples_dir)
            template = build_template(index, keys, job.contract_type)
            atomic_write_text(out_dir / f"{job.name}.template.json", template.to_text())
            contract_text = job.contract_path.read_text(encoding="utf-8")
            kb = KnowledgeBase.load(job.kb_path) if job.kb_path else None
            doc = populate(template, contract_text, kb, gateway, cfg)
        except ProviderUnavailable as exc:
            write_json(out_dir / f"{job.name}.provenance.json", exc.provenance)
            raise
        except CdmgenError as exc:
            failures.append((job.name, type(exc).__name__))
            continue
        write_json(out_dir / f"{job.name}.provenance.json", doc.provenance)
        cleaned = clean(doc)
        write_json(out_dir / f"{job.name}.cdm.json", cleaned)
        if any(record.get("failed") for record in doc.provenance.values()):
            failures.append((job.name, "PopulationIncomplete"))
            continue
        try:
            report = evaluator.evaluate_document(cleaned, index)
            if run.coverage:
                lists = evaluator.coverage_lists(contract_text, cleaned, gateway)
                report.lists = lists
                report.coverage_score = evaluator.coverage_score(lists, weights)
        except ProviderUnavailable:
            raise
        except CdmgenError as exc:
            failures.append((job.name, type(exc).__name__))
            continue
        envelope = {"contract_type": job.contract_type, **report.to_dict()}
        write_json(out_dir / f"{job.name}.report.json", envelope)
        groups.setdefault(job.contract_type, []).append(report)

    _write_summary(out_dir / "summary.csv", _summary_rows(groups, failures))
    return 0


# ---------------------------------------------------------------------------
# parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdmgen",
        description="Convert derivative contract text into CDM-conformant JSON "
        "via schema-derived templates, and score the results.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-template", help="derive a template from schemas plus examples")
    p.add_argument("--schema-dir", required=True)
    p.add_argument("--root", required=True, help="root schema file")
    p.add_argument("--examples", required=True, help="directory of example instances")
    p.add_argument("--contract-type", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_template)

    p = sub.add_parser("ingest-kb", help="chunk example instances into a knowledge base")
    p.add_argument("--examples", required=True)
    p.add_argument("--contract-type", required=True)
    p.add_argument("--budget", type=int, required=True, help="chunk token budget")
    p.add_argument("--out", required=True)
    p.add_argument("--embed", action="store_true", help="attach embedding vectors")
    p.add_argument("--mock-embedder", action="store_true", help="deterministic offline embedder")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_ingest_kb)

    p = sub.add_parser("populate", help="fill a template from contract text")
    p.add_argument("--template", required=True)
    p.add_argument("--contract", required=True)
    p.add_argument("--kb")
    p.add_argument("--rag", action="store_true", default=None)
    p.add_argument("--depth", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--k-chunks", type=int)
    p.add_argument("--max-inflight", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--provenance")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_populate)

    p = sub.add_parser("baseline", help="direct single-prompt generation, no template")
    p.add_argument("--contract", required=True)
    p.add_argument("--kb")
    p.add_argument("--rag", action="store_true", default=None)
    p.add_argument("--depth", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--k-chunks", type=int)
    p.add_argument("--max-inflight", type=int)
    p.add_argument("--out", required=True)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("synthesize", help="write a contract description for a CDM instance")
    p.add_argument("--example", required=True, help="structured instance (JSON)")
    p.add_argument("--reference", action="append", default=[], help="reference term sheet (repeatable)")
    p.add_argument("--out", required=True)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="score a generated document against the schema")
    p.add_argument("--contract", required=True)
    p.add_argument("--cdm", required=True)
    p.add_argument("--schema-dir", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--contract-type", default="")
    p.add_argument("--mu", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--coverage", action="store_true", help="also run semantic coverage")
    p.add_argument("--out", required=True)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="aggregate evaluation reports into a summary table")
    p.add_argument("--in", dest="input", required=True, help="directory of report JSON files")
    p.add_argument("--group-by", choices=["contract-type"], default="contract-type")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="template + populate + evaluate for a batch")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--out-dir")
    p.add_argument("--depth", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--mock-script")
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args, parser)
    except CdmgenError as exc:
        print(
            json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
