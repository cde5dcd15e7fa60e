"""Command-line surface: generate data, produce attributions, run evaluators.

Subcommands: synth, explain, eval, report, selfcheck, adapter-check.
Exit codes: 0 ok, 2 config error, 3 capability error, 4 validation error,
5 model transport error.

Runs are driven by a flat key=value config file with CLI flag overrides
(flags win); the resolved configuration is hashed and embedded in every
artifact, so runs with equal hashes are byte-identical.
"""

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import math
import os
import shlex
import sys
import time

import numpy as np

from . import adapter as adapter_mod
from . import attribution as attr_mod
from . import report as report_mod
from .agreement import map_interaction_level, map_token_level
from .complexity import dataset_complexity, entropy_complexity
from .core import (
    AttributionSet,
    Kind,
    Token,
    load_attributions,
    load_dataset,
    save_attributions,
    save_dataset,
)
from .errors import (
    AttribevalError,
    CapacityError,
    ConfigError,
    ContractViolation,
    DegenerateInputError,
    DuplicateIdError,
    EmptyEvaluationError,
    ModelUnavailableError,
    NumericError,
    ParseError,
    ProtocolError,
    TrainingError,
    UnsupportedCapabilityError,
    ValidationError,
)
from .faithfulness import instance_rng, unified_faithfulness
from .model import ATTENTION, GRAD_DOT, model_from_config
from .simulatability import (
    AgentHyperparams,
    insert_symbol,
    insert_text,
    unified_simulatability,
)
from .synth import SynthSpec, generate

PROPERTIES = ("faithfulness", "agreement", "simulatability", "complexity")

# method name -> (kind, required capabilities)
METHODS: dict[str, tuple[Kind, tuple[str, ...]]] = {
    "shapley-exact": (Kind.TOKEN, ()),
    "shapley-kernel": (Kind.TOKEN, ()),
    "ig": (Kind.TOKEN, (GRAD_DOT,)),
    "attention-token": (Kind.TOKEN, (ATTENTION,)),
    "shapley-pair": (Kind.TOKEN_PAIR, ()),
    "attention-pair": (Kind.TOKEN_PAIR, (ATTENTION,)),
    "louvain-shapley": (Kind.SPAN_PAIR, ()),
    "louvain-attention": (Kind.SPAN_PAIR, (ATTENTION,)),
}

CONFIG_KEYS: dict[str, type] = {
    "model": str,
    "dataset": str,
    "out_dir": str,
    "methods": str,
    "properties": str,
    "budget_source": str,
    "k_faith": int,
    "k_sim": int,
    "insertion": str,
    "seed": int,
    "kernel_samples": int,
    "ig_steps": int,
    "head": str,
    "jobs": int,
    "matcher": str,
    "exact_cap": int,
    "resolution": float,
    "bivariate_permutations": int,
    "ratios": str,
    "ranking": str,
    "agent_lr": float,
    "agent_epochs": int,
    "agent_l2": float,
    "agent_patience": int,
}

DEFAULTS = {
    "out_dir": "out",
    "properties": ",".join(PROPERTIES),
    "k_faith": 3,
    "k_sim": 1,
    "insertion": "symbol",
    "kernel_samples": 2048,
    "ig_steps": 50,
    "head": "auto",
    "jobs": 0,
    "matcher": "exact",
    "exact_cap": attr_mod.EXACT_ENUMERATION_CAP,
    "resolution": 1.0,
    "bivariate_permutations": attr_mod.DEFAULT_BIVARIATE_PERMUTATIONS,
    "ratios": "0.6,0.2,0.2",
    "ranking": "signed",
    "agent_lr": 0.5,
    "agent_epochs": 300,
    "agent_l2": 1e-3,
    "agent_patience": 30,
}


def parse_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment; keys are typed."""
    out: dict = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}")
    with fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
            try:
                out[key] = CONFIG_KEYS[key](value)
            except ValueError:
                raise ConfigError(
                    f"{path}:{line_no}: {key!r} expects {CONFIG_KEYS[key].__name__}"
                )
    return out


def resolve_config(args: argparse.Namespace, required: tuple[str, ...]) -> dict:
    """Config file values overridden by CLI flags, checked against the schema."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for key in CONFIG_KEYS:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            cfg[key] = flag
    for key in required:
        if key not in cfg or cfg[key] in (None, ""):
            raise ConfigError(f"missing required config key {key!r}")
    if "seed" in required and not isinstance(cfg.get("seed"), int):
        raise ConfigError("seeds are mandatory; set 'seed' in the config or pass --seed")
    if "methods" in cfg and isinstance(cfg["methods"], str):
        cfg["methods"] = [m.strip() for m in cfg["methods"].split(",") if m.strip()]
        for name in cfg["methods"]:
            if name not in METHODS:
                raise ConfigError(
                    f"unknown method {name!r}; known: {', '.join(sorted(METHODS))}"
                )
    if "properties" in cfg and isinstance(cfg["properties"], str):
        cfg["properties"] = [p.strip() for p in cfg["properties"].split(",") if p.strip()]
        for name in cfg["properties"]:
            if name not in PROPERTIES:
                raise ConfigError(f"unknown property {name!r}; known: {', '.join(PROPERTIES)}")
    if cfg.get("insertion") not in ("none", "symbol", "text"):
        raise ConfigError("insertion must be none, symbol, or text")
    if cfg.get("ranking") not in ("signed", "magnitude"):
        raise ConfigError("ranking must be signed or magnitude")
    return cfg


def _file_digest(path: str) -> str:
    try:
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()[:16]
    except OSError:
        return "missing"


def config_hash(cfg: dict) -> str:
    """Digest of the resolved configuration, identifying the computation.

    Input files (dataset, builtin model parameters) enter by content, not by
    path, and the output directory is excluded, so equal hashes mean equal
    output bytes regardless of where a run lives on disk.
    """
    canonical = []
    for key in sorted(cfg):
        if key == "out_dir":
            continue
        value = cfg[key]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        if key == "dataset" and isinstance(value, str):
            value = f"content:{_file_digest(value)}"
        elif key == "model" and isinstance(value, str) and value.startswith("builtin:"):
            parts = value.split(":", 2)
            if len(parts) == 3:
                value = f"builtin:{parts[1]}:content:{_file_digest(parts[2])}"
        canonical.append(f"{key}={value}")
    return hashlib.sha256("\n".join(canonical).encode("utf-8")).hexdigest()[:16]


def build_model(spec: str):
    """builtin:<linear|attention>:<models.json> or adapter:<stdio|http>:<address>."""
    parts = spec.split(":", 2)
    if len(parts) != 3:
        raise ConfigError(
            "model spec must be builtin:<name>:<models.json> or adapter:<stdio|http>:<address>"
        )
    family, which, address = parts
    if family == "builtin":
        if which not in ("linear", "attention"):
            raise ConfigError(f"unknown builtin model {which!r}")
        try:
            with open(address, encoding="utf-8") as fh:
                configs = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read models file {address!r}: {exc}")
        cfg = configs.get(which) if isinstance(configs, dict) and which in configs else configs
        return model_from_config(cfg, model_id=f"builtin:{which}")
    if family == "adapter":
        transport = {"stdio": "subprocess-stdio", "http": "http"}.get(which)
        if transport is None:
            raise ConfigError(f"unknown adapter transport {which!r}")
        return adapter_mod.handshake(adapter_mod.AdapterEndpoint(transport, address))
    raise ConfigError(f"unknown model family {family!r}")


def _instance_seed(master: int, instance_id: str, salt: str) -> int:
    return int(instance_rng(master, instance_id, salt).integers(2 ** 31))


class ExplainRun:
    """Shared state for one explain pass: model, config, per-instance memo."""

    def __init__(self, model, cfg: dict, head: int | None):
        self.model = model
        self.cfg = cfg
        self.head = head

    def _game(self, instance, memo) -> attr_mod.CoalitionGame:
        if "game" not in memo:
            memo["game"] = attr_mod.CoalitionGame(instance, self.model)
        return memo["game"]

    def _bivariate(self, instance, memo):
        if "bivariate" not in memo:
            memo["bivariate"] = attr_mod.bivariate_shapley_full(
                self._game(instance, memo),
                cap=self.cfg["exact_cap"],
                num_permutations=self.cfg["bivariate_permutations"],
                seed=_instance_seed(self.cfg["seed"], instance.id, "bivariate"),
            )
        return memo["bivariate"]

    def _attention_pairs(self, instance, memo):
        if "attention_pairs" not in memo:
            memo["attention_pairs"] = attr_mod.attention_interaction_full(
                self.model, instance, self.head
            )
        return memo["attention_pairs"]

    def produce(self, name: str, instance, memo: dict) -> AttributionSet:
        aset = self._produce(name, instance, memo)
        if self.cfg["ranking"] != "signed":
            aset = AttributionSet.from_scores(aset.instance_id, aset.kind, aset.method,
                                              aset.entries, rule=self.cfg["ranking"],
                                              flags=aset.flags)
        return aset

    def _produce(self, name: str, instance, memo: dict) -> AttributionSet:
        cfg = self.cfg
        if name == "shapley-exact":
            return attr_mod.exact_shapley(self._game(instance, memo), cap=cfg["exact_cap"])
        if name == "shapley-kernel":
            return attr_mod.kernel_shap(
                self._game(instance, memo), cfg["kernel_samples"],
                _instance_seed(cfg["seed"], instance.id, "kernel"),
            )
        if name == "ig":
            return attr_mod.integrated_gradients(
                self.model, instance, cfg["ig_steps"]).attributions
        if name == "attention-token":
            return attr_mod.attention_token(self.model, instance, self.head)
        if name == "shapley-pair":
            return self._bivariate(instance, memo)[0]
        if name == "attention-pair":
            return self._attention_pairs(instance, memo)[0]
        if name == "louvain-shapley":
            pairs, graph = self._bivariate(instance, memo)
            return attr_mod.louvain_spans(
                pairs, graph, cfg["resolution"],
                _instance_seed(cfg["seed"], instance.id, "louvain"))
        if name == "louvain-attention":
            pairs, graph = self._attention_pairs(instance, memo)
            return attr_mod.louvain_spans(
                pairs, graph, cfg["resolution"],
                _instance_seed(cfg["seed"], instance.id, "louvain"))
        raise ConfigError(f"unknown method {name!r}")


def _check_capabilities(model, methods: list[str]) -> None:
    for name in methods:
        for cap in METHODS[name][1]:
            if not model.supports(cap):
                raise UnsupportedCapabilityError(
                    f"method {name!r} needs the {cap!r} capability, which model"
                    f" {model.id!r} does not declare"
                )


def _resolve_head(model, instances, cfg: dict) -> int | None:
    wants_attention = any(METHODS[m][1] == (ATTENTION,) for m in cfg["methods"])
    if not wants_attention:
        return None
    if cfg["head"] != "auto":
        try:
            return int(cfg["head"])
        except ValueError:
            raise ConfigError("head must be an integer or 'auto'")
    calibration = [inst for inst, _ in instances[: min(8, len(instances))]]
    return attr_mod.select_head(model, calibration, budget=2, seed=cfg["seed"])


def _write_meta(path: str, cfg_hash: str, cfg: dict, extra: dict) -> None:
    meta = {"config_hash": cfg_hash, "seed": cfg["seed"]}
    meta.update(extra)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_explain(args) -> int:
    cfg = resolve_config(args, required=("model", "dataset", "methods", "seed"))
    cfg_hash = config_hash(cfg)
    records = load_dataset(cfg["dataset"])
    model = build_model(cfg["model"])
    _check_capabilities(model, cfg["methods"])
    head = _resolve_head(model, records, cfg)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    run = ExplainRun(model, cfg, head)
    instances = [inst for inst, _ in records]

    jobs = cfg["jobs"] or (os.cpu_count() or 1)
    jobs = max(1, min(jobs, len(instances)))
    start = time.monotonic()

    def work(instance):
        memo: dict = {}
        return {name: run.produce(name, instance, memo) for name in cfg["methods"]}

    results: list[dict[str, AttributionSet]] = [None] * len(instances)
    if jobs == 1 or not model.thread_safe:
        for i, instance in enumerate(instances):
            results[i] = work(instance)
            if (i + 1) % 50 == 0:
                print(f"explained {i + 1}/{len(instances)} instances", file=sys.stderr)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(work, inst): i for i, inst in enumerate(instances)}
            done = 0
            for future in concurrent.futures.as_completed(futures):
                results[futures[future]] = future.result()
                done += 1
                if done % 50 == 0:
                    print(f"explained {done}/{len(instances)} instances", file=sys.stderr)

    for name in cfg["methods"]:
        sets = [dataclasses.replace(results[i][name], method=name)
                for i in range(len(instances))]
        path = os.path.join(cfg["out_dir"], f"attr_{name}.jsonl")
        save_attributions(sets, path)
        extra = {"method": name, "model_id": model.id, "kind": METHODS[name][0].value}
        if head is not None and ATTENTION in METHODS[name][1]:
            extra["head"] = head
        _write_meta(path.replace(".jsonl", ".meta.json"), cfg_hash, cfg, extra)
    elapsed = time.monotonic() - start
    print(f"explain finished in {elapsed:.1f}s", file=sys.stderr)
    print(f"methods: {','.join(cfg['methods'])}")
    print(f"instances: {len(instances)}")
    print(f"predict calls: {model.calls}")
    print(f"config hash: {cfg_hash}")
    if hasattr(model, "close"):
        model.close()
    return 0


def _load_method_sets(cfg: dict) -> dict[str, dict[str, AttributionSet]]:
    methods: dict[str, dict[str, AttributionSet]] = {}
    missing = []
    for name in cfg["methods"]:
        path = os.path.join(cfg["out_dir"], f"attr_{name}.jsonl")
        if not os.path.exists(path):
            missing.append(f"attr_{name}.jsonl")
            continue
        methods[name] = {aset.instance_id: aset for aset in load_attributions(path)}
    if missing:
        raise ConfigError(
            "missing attribution files (run `attribeval explain` first to produce): "
            + ", ".join(missing)
        )
    return methods


def _pick_budget_source(cfg: dict, methods: dict) -> str:
    source = cfg.get("budget_source")
    if source:
        if source not in methods:
            raise ConfigError(f"budget source {source!r} is not among the loaded methods")
        return source
    for name in cfg["methods"]:
        if METHODS[name][0] == Kind.SPAN_PAIR:
            return name
    raise ConfigError("no span-pair method available to set token budgets;"
                      " add one (e.g. louvain-shapley) or set budget_source")


def cmd_eval(args) -> int:
    cfg = resolve_config(args, required=("model", "dataset", "methods", "seed"))
    cfg_hash = config_hash(cfg)
    records = load_dataset(cfg["dataset"])
    instances = [inst for inst, _ in records]
    golds = {inst.id: gold for inst, gold in records}
    methods = _load_method_sets(cfg)
    budget_source = _pick_budget_source(cfg, methods)
    model = build_model(cfg["model"])
    seed = cfg["seed"]
    kinds = {name: METHODS[name][0] for name in methods}

    blocks: dict[str, dict] = {}
    if "faithfulness" in cfg["properties"]:
        rep = unified_faithfulness(model, instances, methods, budget_source,
                                   k_max=cfg["k_faith"], seed=seed)
        blocks["faithfulness"] = report_mod.faithfulness_block(rep, kinds)
    if "agreement" in cfg["properties"]:
        reports = [map_token_level(methods, golds, instances, budget_source,
                                   k_max=cfg["k_faith"], seed=seed)]
        interaction = {name: per for name, per in methods.items()
                       if kinds[name] != Kind.TOKEN}
        if interaction:
            reports.append(map_interaction_level(
                interaction, golds, instances, budget_source,
                k_max=cfg["k_faith"], matcher=cfg["matcher"], seed=seed))
        blocks["agreement"] = report_mod.agreement_block(reports)
    if "simulatability" in cfg["properties"]:
        ratios = tuple(float(r) for r in cfg["ratios"].split(","))
        hp = AgentHyperparams(cfg["agent_lr"], cfg["agent_epochs"],
                              cfg["agent_l2"], cfg["agent_patience"])
        rep = unified_simulatability(model, instances, methods, budget_source,
                                     insertion=cfg["insertion"], k=cfg["k_sim"],
                                     ratios=ratios, hyperparams=hp, seed=seed,
                                     persist_dir=os.path.join(cfg["out_dir"], "agents"))
        blocks["simulatability"] = report_mod.simulatability_block(rep)
    if "complexity" in cfg["properties"]:
        rep = dataset_complexity(methods, budget_source, seed=seed)
        blocks["complexity"] = report_mod.complexity_block(rep)

    report = report_mod.build_report(
        dataset_id=os.path.basename(cfg["dataset"]),
        model_id=model.id,
        config_hash=cfg_hash,
        seed=seed,
        properties=blocks,
        k_faith=cfg["k_faith"],
        k_sim=cfg["k_sim"],
    )
    os.makedirs(cfg["out_dir"], exist_ok=True)
    report_path = os.path.join(cfg["out_dir"], "report.json")
    report_mod.save_report(report, report_path)
    report_mod.write_csvs(report, cfg["out_dir"])
    report_mod.write_radar(report, os.path.join(cfg["out_dir"], "radar.csv"))
    print(f"report: {report_path}")
    print(f"properties: {','.join(sorted(blocks))}")
    print(f"config hash: {cfg_hash}")
    if hasattr(model, "close"):
        model.close()
    return 0


def cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    report_mod.validate_report(report)
    radar = report_mod.radar_rows(report)
    out_path = args.out or os.path.join(os.path.dirname(args.report) or ".", "radar.csv")
    report_mod.write_radar(report, out_path)
    print(f"{'property':<20} {'method':<24} normalized")
    for prop, method, value in radar:
        print(f"{prop:<20} {method:<24} {value:.3f}")
    print(f"radar data: {out_path}")
    return 0


def cmd_synth(args) -> int:
    if args.seed is None:
        raise ConfigError("seeds are mandatory; pass --seed")
    spec = SynthSpec(
        num_instances=args.instances,
        vocab_size=args.vocab,
        m_range=tuple(int(v) for v in args.m_range.split(",")),
        n_range=tuple(int(v) for v in args.n_range.split(",")),
        num_pairs=args.pairs,
        plant_all_pairs=args.plant_all_pairs,
        run_length=tuple(int(v) for v in args.run_length.split(",")),
        singleton_rate=args.singleton_rate,
        positive_rate=args.positive_rate,
        noise=args.noise,
        seed=args.seed,
    )
    result = generate(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    dataset_path = os.path.join(args.out_dir, "dataset.jsonl")
    models_path = os.path.join(args.out_dir, "models.json")
    save_dataset(result.records, dataset_path)
    with open(models_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(result.models_config(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    spec_dict = dataclasses.asdict(spec)
    meta = {"config_hash": hashlib.sha256(
        json.dumps(spec_dict, sort_keys=True).encode()).hexdigest()[:16],
        "seed": args.seed, "spec": spec_dict}
    with open(os.path.join(args.out_dir, "synth.meta.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"dataset: {dataset_path}")
    print(f"models: {models_path}")
    print(f"instances: {len(result.records)}")
    return 0


def cmd_adapter_check(args) -> int:
    transport = "subprocess-stdio" if args.transport == "stdio" else "http"
    handle = adapter_mod.handshake(adapter_mod.AdapterEndpoint(transport, args.address))
    if args.dataset:
        probes = [list(inst.tokens) for inst, _ in load_dataset(args.dataset)[:5]]
    else:
        probes = [["a", "small", "probe"], ["another", "probe", "input", "here"]]
    report = adapter_mod.check_conformance(handle, probes, seed=args.seed or 0)
    for line in report.lines():
        print(line)
    print(f"conformance: {'PASS' if report.passed else 'FAIL'}")
    handle.close()
    return 0 if report.passed else 1


def _selfcheck_lines() -> tuple[list[str], bool]:
    """Fast oracle suite; returns (report lines, all passed)."""
    from .agreement import ap_from_sets
    from .attribution import (
        AdditiveGame,
        TableGame,
        bivariate_shapley_directed,
        exact_shapley_values,
        kernel_shap_values,
    )
    from .core import Instance
    from .louvain import louvain_communities, modularity
    from .model import make_linear_bow_model, mask_keep, mask_omit

    lines: list[str] = []
    ok = True

    def check(name: str, passed: bool, detail: str = ""):
        nonlocal ok
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {name}" + (f" ({detail})" if detail else ""))

    rng = np.random.default_rng(20240)
    # exact Shapley: efficiency + permutation-oracle agreement
    worst_eff = 0.0
    for _ in range(20):
        n = int(rng.integers(4, 9))
        game = TableGame(rng.normal(size=1 << n))
        phi = exact_shapley_values(game)
        delta = float(game.table[(1 << n) - 1] - game.table[0])
        worst_eff = max(worst_eff, abs(phi.sum() - delta))
    check("exact-shapley-efficiency", worst_eff <= 1e-9, f"max gap {worst_eff:.1e}")

    import itertools
    game = TableGame(rng.normal(size=1 << 5))
    phi = exact_shapley_values(game)
    oracle = np.zeros(5)
    for perm in itertools.permutations(range(5)):
        mask = 0
        for player in perm:
            oracle[player] += float(game.values([mask | (1 << player)])[0]
                                    - game.values([mask])[0])
            mask |= 1 << player
    oracle /= math.factorial(5)
    gap = float(np.max(np.abs(phi - oracle)))
    check("exact-vs-permutation-oracle", gap <= 1e-9, f"max gap {gap:.1e}")

    # kernel SHAP vs exact, plus the efficiency constraint
    game = TableGame(rng.normal(size=1 << 8))
    exact = exact_shapley_values(game)
    approx, _ = kernel_shap_values(game, samples=2048, seed=7)
    if os.environ.get("ATTRIBEVAL_SELFCHECK_CORRUPT") == "kernel":
        approx = approx.copy()
        approx[0] += 0.1  # test hook: break the efficiency identity on purpose
    delta = float(game.table[(1 << 8) - 1] - game.table[0])
    eff_gap = abs(float(approx.sum()) - delta)
    check("kernel-shap-efficiency", eff_gap <= 1e-9, f"gap {eff_gap:.1e}")
    approx_gap = float(np.max(np.abs(approx - exact)))
    check("kernel-vs-exact", approx_gap <= 0.08, f"max err {approx_gap:.3f}")
    add_phi, _ = kernel_shap_values(AdditiveGame([0.3, -0.2, 0.5, 0.1]), 64, seed=3)
    add_gap = float(np.max(np.abs(add_phi - np.array([0.3, -0.2, 0.5, 0.1]))))
    check("kernel-additive-exact", add_gap <= 1e-6, f"max err {add_gap:.1e}")

    # directed bivariate vs restricted-permutation oracle on a 3-player game
    game = TableGame(rng.normal(size=8))
    impl = bivariate_shapley_directed(game, 0, 1)
    total, count = 0.0, 0
    for perm in itertools.permutations(range(3)):
        if perm.index(1) < perm.index(0):
            mask = 0
            for player in perm[: perm.index(0)]:
                mask |= 1 << player
            total += float(game.values([mask | 1])[0] - game.values([mask])[0])
            count += 1
    biv_gap = abs(impl - total / count)
    check("bivariate-vs-enumeration", biv_gap <= 1e-9, f"gap {biv_gap:.1e}")

    # louvain on the two-block graph vs brute-force modularity
    w = np.zeros((8, 8))
    for p, q in [(0, 4), (0, 5), (1, 4), (1, 5), (2, 6), (2, 7), (3, 6), (3, 7)]:
        w[p, q] = w[q, p] = 1.0
    comms = louvain_communities(w, seed=0)
    check("louvain-two-block",
          comms == [[0, 1, 4, 5], [2, 3, 6, 7]] and abs(modularity(w, comms) - 0.5) < 1e-12)

    # masking identities and the constant model
    inst = Instance("sc", ("a", "b", "c"), ("d", "e"), 0)
    comp_ok = all(
        mask_omit(inst, s, "[MASK]") == mask_keep(inst, set(range(5)) - set(s), "[MASK]")
        for s in ([], [0], [1, 3], [0, 1, 2, 3, 4])
    )
    check("mask-complement-identity", comp_ok)
    const = make_linear_bow_model({}, [0.0, 0.0])
    check("constant-model-prediction",
          const.predict(inst.tokens).probs == (0.5, 0.5)
          and const.predict(inst.tokens).label == 0)

    # insertion formats
    inst2 = Instance("sc2", ("a", "dog"), ("an", "animal"), 0)
    check("symbol-insertion",
          insert_symbol(inst2, [Token(1)]) == ["a", "<", "dog", ">", "#1", "an", "animal"])
    check("text-insertion",
          insert_text(inst2, [Token(1), Token(3)])
          == ["a", "dog", "an", "animal", "||", "dog", ";", "animal"])

    # entropy hand values
    from .core import AttributionSet as ASet
    uniform = ASet.from_scores("sc", Kind.TOKEN, "m",
                               [(Token(i), 1.0) for i in range(4)])
    cl_uniform, _ = entropy_complexity(uniform, 4)
    two = ASet.from_scores("sc", Kind.TOKEN, "m", [(Token(0), 0.75), (Token(1), 0.25)])
    cl_two, _ = entropy_complexity(two, 2)
    check("entropy-hand-values",
          abs(cl_uniform - math.log(4)) <= 1e-12 and abs(cl_two - 0.5623351446) <= 1e-4)

    # average-precision hand cases
    ap_perfect = ap_from_sets([[0, 1]], [0, 1])
    ap_mixed = ap_from_sets([[0], [0, 9], [0, 9, 1]], [0, 1])
    check("average-precision-hand-cases",
          abs(ap_perfect - 1.0) <= 1e-12 and abs(ap_mixed - 5.0 / 6.0) <= 1e-12)

    # loopback adapter conformance over a real subprocess
    import tempfile

    from .synth import SynthSpec as SSpec
    from .synth import generate as sgen
    result = sgen(SSpec(num_instances=6, seed=3))
    with tempfile.TemporaryDirectory() as tmp:
        models_path = os.path.join(tmp, "models.json")
        with open(models_path, "w", encoding="utf-8") as fh:
            json.dump(result.models_config(), fh)
        command = f"{shlex.quote(sys.executable)} -m attribeval.loopback --config {shlex.quote(models_path)} --model linear"
        handle = adapter_mod.handshake(
            adapter_mod.AdapterEndpoint("subprocess-stdio", command))
        probes = [list(inst.tokens) for inst in result.instances()[:3]]
        conf = adapter_mod.check_conformance(handle, probes, seed=1)
        handle.close()
        check("loopback-conformance", conf.passed,
              "; ".join(line for line in conf.lines() if line.startswith("FAIL")) or "all checks")
    return lines, ok


def cmd_selfcheck(_args) -> int:
    lines, ok = _selfcheck_lines()
    for line in lines:
        print(line)
    print(f"selfcheck: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attribeval",
        description="attribution methods and budget-matched diagnostics for two-part classifiers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a planted synthetic dataset + toy models")
    p_synth.add_argument("--out-dir", default="out")
    p_synth.add_argument("--instances", type=int, default=200)
    p_synth.add_argument("--vocab", type=int, default=40)
    p_synth.add_argument("--pairs", type=int, default=2)
    p_synth.add_argument("--plant-all-pairs", action="store_true")
    p_synth.add_argument("--m-range", default="5,7")
    p_synth.add_argument("--n-range", default="5,7")
    p_synth.add_argument("--run-length", default="2,3")
    p_synth.add_argument("--singleton-rate", type=float, default=0.4)
    p_synth.add_argument("--positive-rate", type=float, default=0.5)
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    def add_run_flags(p):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--model", default=None)
        p.add_argument("--dataset", default=None)
        p.add_argument("--out-dir", dest="out_dir", default=None)
        p.add_argument("--methods", default=None, help="comma-separated method names")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--budget-source", dest="budget_source", default=None)
        p.add_argument("--k-faith", dest="k_faith", type=int, default=None)
        p.add_argument("--k-sim", dest="k_sim", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--head", default=None)
        p.add_argument("--kernel-samples", dest="kernel_samples", type=int, default=None)
        p.add_argument("--ig-steps", dest="ig_steps", type=int, default=None)
        p.add_argument("--insertion", default=None)
        p.add_argument("--matcher", default=None)
        p.add_argument("--properties", default=None)

    p_explain = sub.add_parser("explain", help="produce attribution files for a dataset")
    add_run_flags(p_explain)
    p_explain.set_defaults(func=cmd_explain)

    p_eval = sub.add_parser("eval", help="run the diagnostic properties over attribution files")
    add_run_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="render radar data from a report.json")
    p_report.add_argument("--report", required=True)
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(func=cmd_report)

    p_self = sub.add_parser("selfcheck", help="run the fast oracle and invariant suite")
    p_self.set_defaults(func=cmd_selfcheck)

    p_ac = sub.add_parser("adapter-check", help="conformance-check an external adapter")
    p_ac.add_argument("--transport", choices=["stdio", "http"], required=True)
    p_ac.add_argument("--address", required=True, help="command line (stdio) or base URL (http)")
    p_ac.add_argument("--dataset", default=None, help="probe dataset JSONL")
    p_ac.add_argument("--seed", type=int, default=0)
    p_ac.set_defaults(func=cmd_adapter_check)
    return parser


EXIT_CODES: list[tuple[type, int]] = [
    (ConfigError, 2),
    (UnsupportedCapabilityError, 3),
    (CapacityError, 4),
    (ValidationError, 4),
    (ParseError, 4),
    (DuplicateIdError, 4),
    (ContractViolation, 4),
    (DegenerateInputError, 4),
    (EmptyEvaluationError, 4),
    (NumericError, 4),
    (TrainingError, 4),
    (ModelUnavailableError, 5),
    (ProtocolError, 5),
]


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AttribevalError as exc:
        for exc_type, code in EXIT_CODES:
            if isinstance(exc, exc_type):
                print(f"error: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
