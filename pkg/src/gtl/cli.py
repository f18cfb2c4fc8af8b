"""Command-line front end: ``gtl <subcommand> [--flags]``.

Every command writes JSON lines to stdout.  Each line carries a ``schema``
field naming its record type:

===========================  =================================================
schema                       emitted by
===========================  =================================================
``gtl.gen_stats/1``          gen-tables, one line per table written
``gtl.table_stats/1``        table-stats, one line per table plus a summary
``gtl.simulate/1``           simulate
``gtl.extract/1``            extract
``gtl.attack_report/1``      crack
``gtl.transcript/1``         decrypt, replay-demo
``gtl.bench/1``              bench
``gtl.error/1``              any command that fails
===========================  =================================================

Exit status: 0 success, 2 key not found (not covered or budget exhausted),
3 corrupt or unreadable input, 4 configuration error.

Configuration files are flat ``key = value`` text; ``#`` starts a comment and
keys are lowercase snake case.  Recognised keys and their defaults are the
fields of :class:`ScenarioConfig`.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import platform
import re
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import _kernels as K
from .a51 import preset_by_name
from .attack import (
    crack_session,
    dehop_decrypt,
    derive_samples,
    downgrade_replay_demo,
    extract_known_plaintext,
    session_cipher,
)
from .capture import CaptureFormatError, read_capture, write_capture
from .gsm import AssignmentMode, CellConfig, Cipher, corrupt, run_session
from .tmto import (
    TableFormatError,
    TmtoParams,
    build_table,
    coverage_exact,
    coverage_measure,
    lookup_points,
    read_table,
    start_points,
    write_table,
)

EXIT_OK = 0
EXIT_NOT_COVERED = 2
EXIT_CORRUPT = 3
EXIT_CONFIG = 4

TABLE_SUFFIX = ".gtmt"
TABLE_DIR_ENV = "GTL_TABLE_DIR"

# published full-scale figures, quoted for comparison only
REFERENCE = {
    "table_set_terabytes": 1.7,
    "coverage": 0.22,
    "lookup_minutes": [1, 4],
    "reproduced": False,
}


class ConfigError(ValueError):
    pass


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    # cell
    arfcn_allocation: tuple[int, ...] = CellConfig.arfcn_allocation
    hsn: int = 21
    maio: int = 0
    hopping_enabled: bool = True
    assignment_mode: str = "early"
    cipher: str = "a51"
    random_padding: bool = False
    weak_keys: bool = False
    cell_id: int = 0x1F2E
    bcch_arfcn: int = 1
    traffic_slot: int = 2
    decoy_load: float = 0.0
    # session
    preset: str = "TOY"
    traffic_blocks: int = 8
    ber: float = 0.0
    seed: int = 0
    # tables
    tables: int = 4
    chain_count: int = 1 << 16
    colors: int = 4
    dp_mask_bits: int = 6
    max_steps_per_color: int = 1 << 10

    def cell(self) -> CellConfig:
        return CellConfig(
            arfcn_allocation=self.arfcn_allocation, hsn=self.hsn, maio=self.maio,
            hopping_enabled=self.hopping_enabled,
            assignment_mode=AssignmentMode(self.assignment_mode), cipher=Cipher(self.cipher),
            random_padding=self.random_padding, weak_keys=self.weak_keys, preset=self.preset,
            cell_id=self.cell_id, bcch_arfcn=self.bcch_arfcn, traffic_slot=self.traffic_slot,
            decoy_load=self.decoy_load,
        )

    def tmto_params(self) -> TmtoParams:
        return TmtoParams(preset_by_name(self.preset), self.colors, self.dp_mask_bits,
                          self.max_steps_per_color)

    def validate(self) -> "ScenarioConfig":
        try:
            self.cell()
            self.tmto_params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.traffic_blocks < 0:
            raise ConfigError("traffic_blocks must be >= 0")
        if not 0.0 <= self.ber <= 1.0:
            raise ConfigError("ber must lie in [0, 1]")
        if self.tables < 1 or self.chain_count < 1:
            raise ConfigError("tables and chain_count must be >= 1")
        return self


_KEY = re.compile(r"[a-z][a-z0-9_]*")


def _convert(name: str, default, text: str):
    if isinstance(default, bool):
        if text.lower() in ("true", "yes", "on", "1"):
            return True
        if text.lower() in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, tuple):
            return tuple(int(v, 0) for v in text.split(",") if v.strip())
        if isinstance(default, int):
            return int(text, 0)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def parse_config(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    defaults = {f.name: f.default for f in fields(ScenarioConfig)}
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not _KEY.fullmatch(key):
            raise ConfigError(f"line {n}: expected lowercase key = value")
        if key not in defaults:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        values[key] = _convert(key, defaults[key], value)
    return dataclasses.replace(base or ScenarioConfig(), **values).validate()


def load_config(path: str | None, seed: int | None = None) -> ScenarioConfig:
    cfg = ScenarioConfig()
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = parse_config(text)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg.validate()


def emit(record: dict, out=None) -> None:
    print(json.dumps(record, sort_keys=True), file=out or sys.stdout, flush=True)


# --- table helpers ----------------------------------------------------------

def table_dir(arg: str | None) -> Path:
    d = arg or os.environ.get(TABLE_DIR_ENV)
    if not d:
        raise ConfigError(f"no table directory: pass --tables-dir or set {TABLE_DIR_ENV}")
    return Path(d)


def load_tables(directory: Path):
    if not directory.is_dir():
        raise ConfigError(f"table directory {directory} does not exist")
    tables = []
    for path in sorted(directory.glob("*" + TABLE_SUFFIX)):
        try:
            tables.append(read_table(path))
        except TableFormatError as exc:
            raise InputError(f"{path.name}: {exc}") from None
    return tables


def _table_record(table, name=None) -> dict:
    p = table.params
    return {"table_id": p.table_id, "preset": p.cipher.name, "colors": p.colors,
            "dp_mask_bits": p.dp_mask_bits, "max_steps_per_color": p.max_steps_per_color,
            "records": len(table), "seed": table.seed, **({"file": name} if name else {})}


# --- subcommands ------------------------------------------------------------

def cmd_gen_tables(args) -> int:
    cfg = load_config(args.config, args.seed)
    if args.tables is not None or args.chain_count is not None:
        cfg = dataclasses.replace(
            cfg, tables=args.tables if args.tables is not None else cfg.tables,
            chain_count=args.chain_count if args.chain_count is not None else cfg.chain_count,
        ).validate()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = cfg.tmto_params()
    for i in range(cfg.tables):
        params = base.with_table_id(i)
        table, stats = build_table(params, cfg.chain_count, cfg.seed, args.threads)
        name = f"table_{i:03d}{TABLE_SUFFIX}"
        write_table(table, out / name)
        emit({"schema": "gtl.gen_stats/1", **_table_record(table, name),
              "requested": stats.requested, "kept": stats.kept, "merged": stats.merged,
              "overflowed": stats.overflowed, "seconds": round(stats.seconds, 6),
              "chains_per_second": round(stats.chains_per_second, 1)})
    return EXIT_OK


def cmd_table_stats(args) -> int:
    K.set_threads(args.threads)
    directory = table_dir(args.tables_dir)
    tables = load_tables(directory)
    names = sorted(p.name for p in directory.glob("*" + TABLE_SUFFIX))
    for table, name in zip(tables, names):
        emit({"schema": "gtl.table_stats/1", **_table_record(table, name)})
    summary = {"schema": "gtl.table_stats/1", "tables": len(tables),
               "records": sum(len(t) for t in tables)}
    if tables and tables[0].params.cipher.state_width <= 24:
        cov = coverage_measure(tables, args.trials, args.seed or 0)
        summary.update(coverage_exact=coverage_exact(tables), coverage_measured=cov.fraction,
                       coverage_low=cov.low, coverage_high=cov.high, trials=cov.trials)
    emit(summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    try:
        capture = run_session(cfg.cell(), cfg.seed, cfg.traffic_blocks)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    capture = corrupt(capture, cfg.ber, cfg.seed + 1)
    path = write_capture(capture, args.out, with_truth=not args.no_truth)
    emit({"schema": "gtl.simulate/1", "capture": str(path), "bursts": len(capture.bursts),
          "bit_flips": capture.bit_flips, "arfcns": sorted({b.arfcn for b in capture.bursts}),
          "truth": not args.no_truth, "seed": cfg.seed})
    return EXIT_OK


def _read_attacker_capture(path: str):
    try:
        return read_capture(path)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None


def cmd_extract(args) -> int:
    capture = _read_attacker_capture(args.capture)
    guesses = extract_known_plaintext(capture)
    samples = derive_samples(capture, guesses)
    by_source = {}
    for s in samples:
        by_source[s.source] = by_source.get(s.source, 0) + 1
    emit({"schema": "gtl.extract/1",
          "guesses": [{"frame": g.frame, "slot": g.slot, "direction": g.direction,
                       "source": g.source, "known_bits": g.known_bits} for g in guesses],
          "samples": len(samples), "samples_by_source": by_source})
    if args.list_samples:
        for s in samples:
            emit({"schema": "gtl.extract/1", "sample": asdict(s)})
    return EXIT_OK


def cmd_crack(args) -> int:
    capture = _read_attacker_capture(args.capture)
    if args.replay:
        return _replay(args, capture)
    tables = load_tables(table_dir(args.tables_dir))
    presets = {t.params.cipher.name for t in tables}
    if presets and presets != {capture.meta.preset}:
        raise ConfigError(f"tables are for {sorted(presets)}, capture is {capture.meta.preset}")
    K.set_threads(args.threads)
    samples = derive_samples(capture, extract_known_plaintext(capture))
    key, report = crack_session(samples, tables, capture, args.max_samples)
    if key is not None:
        transcript = dehop_decrypt(capture, key)
        report.transcript = transcript.messages
        report.decrypted_frames = len(transcript.messages)
    elif not samples:
        report.note = "no keystream samples: nothing predictable was enciphered"
    elif session_cipher(capture) is Cipher.STRONG:
        report.note = "session uses the strong cipher; lookup cannot apply, try --replay"
    emit(report.to_dict())
    return EXIT_OK if key is not None else EXIT_NOT_COVERED


def _replay(args, capture) -> int:
    # the handset's SIM is simulated from the sidecar; nothing else there is read
    try:
        full = read_capture(args.capture, with_truth=True)
    except FileNotFoundError:
        raise InputError("replay needs the .truth sidecar to simulate the victim's SIM") from None
    sim = full.sim_model(fresh_rand=args.fresh_rand)
    report = downgrade_replay_demo(capture, sim)
    emit(_transcript_record(report.transcript, kc=report.witness.derived.kc,
                            recovered=report.recovered, rand=report.witness.rand.hex()))
    return EXIT_OK if report.recovered else EXIT_NOT_COVERED


def _transcript_record(t, **extra) -> dict:
    d = {"schema": "gtl.transcript/1", "messages": [asdict(m) for m in t.messages],
         "crc_failures": t.crc_failures, "missing_bursts": t.missing_bursts,
         "traffic_frames": t.traffic_frames, "traffic_recovered": t.traffic_recovered,
         "hop_parameters": t.hop_parameters}
    if "kc" in extra:
        extra["kc"] = format(extra["kc"], "x")
    d.update(extra)
    return d


def cmd_decrypt(args) -> int:
    capture = _read_attacker_capture(args.capture)
    try:
        kc = int(args.kc, 16)
    except ValueError:
        raise ConfigError("--kc must be hexadecimal") from None
    t = dehop_decrypt(capture, kc)
    emit(_transcript_record(t, kc=kc))
    return EXIT_OK if t.traffic_frames and t.traffic_recovered == t.traffic_frames else EXIT_NOT_COVERED


def cmd_replay_demo(args) -> int:
    return _replay(args, _read_attacker_capture(args.capture))


def _timed(fn, min_seconds):
    """Repeat ``fn`` until ``min_seconds`` have passed; returns (units, seconds, latencies)."""
    units, lat = 0, []
    t0 = time.perf_counter()
    while True:
        t = time.perf_counter()
        units += fn()
        lat.append(time.perf_counter() - t)
        elapsed = time.perf_counter() - t0
        if elapsed >= min_seconds:
            return units, elapsed, lat


def cmd_bench(args) -> int:
    K.set_threads(args.threads)
    params = TmtoParams(preset_by_name(args.preset))
    rng = np.random.default_rng()
    build_table(params, 1 << 10, 0)  # warm caches and compiled kernels
    chains = 1 << 14
    counter = iter(range(1 << 30))
    n_ch, s_ch, _ = _timed(lambda: build_table(params, chains, next(counter))[1].requested,
                           args.seconds)
    table, _ = build_table(params, chains, 12345)
    g = K.geometry(params.cipher)

    def one_lookup():
        lookup_points([table], [int(rng.integers(0, 1 << params.sample_width))])
        return 1

    n_lk, s_lk, lat = _timed(one_lookup, args.seconds)
    states = start_points(int(rng.integers(1 << 32)), 0, 1 << 14, params.cipher.state_width)

    def keystream_block():
        K.keystream_words(states, 64, g)
        return states.size * 64

    n_ks, s_ks, _ = _timed(keystream_block, args.seconds)
    emit({
        "schema": "gtl.bench/1",
        "preset": params.cipher.name,
        "chains_per_second": n_ch / s_ch,
        "lookups_per_second": n_lk / s_lk,
        "lookup_latency_median_s": float(np.median(lat)),
        "keystream_bits_per_second": n_ks / s_ks,
        "seconds": {"chains": s_ch, "lookups": s_lk, "keystream": s_ks},
        "host": {"platform": platform.platform(), "machine": platform.machine(),
                 "python": platform.python_version(), "numpy": np.__version__,
                 "numba": K.numba.__version__, "cpus": os.cpu_count(),
                 "threads": K.numba.get_num_threads(),
                 "threading_layer": _threading_layer()},
        "reference": REFERENCE,
    })
    return EXIT_OK


def _threading_layer() -> str:
    try:
        return K.numba.threading_layer()
    except ValueError:
        return "unset"


# --- argument parsing -------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are configuration errors, not "key not found"
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gtl", description=__doc__.split("\n")[0],
                                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, allow_abbrev=False)
        p.set_defaults(func=func)
        p.add_argument("--threads", type=int, default=None, help="worker threads for kernels")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides the config)")
        return p

    p = add("gen-tables", cmd_gen_tables, "build a table set and write it to disk")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--tables", type=int)
    p.add_argument("--chain-count", type=int)

    p = add("table-stats", cmd_table_stats, "summarise a table directory")
    p.add_argument("--tables-dir")
    p.add_argument("--trials", type=int, default=10_000)

    p = add("simulate", cmd_simulate, "simulate one session and write its capture log")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--no-truth", action="store_true", help="do not write the .truth sidecar")

    p = add("extract", cmd_extract, "list guessed plaintext and keystream samples")
    p.add_argument("--capture", required=True)
    p.add_argument("--list-samples", action="store_true")

    p = add("crack", cmd_crack, "recover the session key and decrypt the capture")
    p.add_argument("--capture", required=True)
    p.add_argument("--tables-dir")
    p.add_argument("--max-samples", type=int)
    p.add_argument("--replay", action="store_true", help="use the challenge replay instead")
    p.add_argument("--fresh-rand", action="store_true", help="SIM refuses repeated challenges")

    p = add("decrypt", cmd_decrypt, "decrypt a capture with a known key")
    p.add_argument("--capture", required=True)
    p.add_argument("--kc", required=True, help="session key in hex")

    p = add("replay-demo", cmd_replay_demo, "replay the recorded challenge and decrypt")
    p.add_argument("--capture", required=True)
    p.add_argument("--fresh-rand", action="store_true", help="SIM refuses repeated challenges")

    p = add("bench", cmd_bench, "measure kernel throughput")
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--preset", default="TOY")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, str(exc)
    except (InputError, CaptureFormatError, TableFormatError) as exc:
        code, msg = EXIT_CORRUPT, str(exc)
    emit({"schema": "gtl.error/1", "command": args.command, "exit": code, "error": msg})
    return code


if __name__ == "__main__":
    sys.exit(main())
