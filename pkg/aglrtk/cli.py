"""aglr command line: gen-data, run, report, dump-attention, compare, ablate.

Exit codes are 0 on success, 1 on a runtime error and 2 on a usage error.
"""
from __future__ import print_function

import argparse, io, os, re, sys
from pathlib import Path

from aglrtk.bagfile import (load_episodes, read_checkpoint, read_family, read_matrix_csv, write_attention_csv,
                            write_checkpoint, write_family, write_matrix_csv, write_report_csv, write_suite,
                            write_summary_csv)
from aglrtk.core import RngStream
from aglrtk.harness import (PAST_RAW_DATA, RESERVED_STRATEGIES, STRATEGIES, RunResult, SequenceSpec, Strategy,
                            evaluate_row, run_sequence)
from aglrtk.metrics import METRICS, TrainTestMatrix, cl_report
from aglrtk.mil import attention_scores
from aglrtk.parse import parse_commands, parse_file
from aglrtk.parse_utils import ArgumentParserError, ArgumentParserHelp, int_list
from aglrtk.settings import AglrSettings
from aglrtk.synthetic import generate_suite

class UsageError(Exception):
    pass

def _build_parser():
    parser = argparse.ArgumentParser(prog="aglr", description="generative latent replay for domain-incremental MIL")
    parser.add_argument("-e","--execute",action="append",default=[],metavar="COMMANDS",
                        help="settings commands, ';' separated, applied after ~/.aglrrc and ./.aglrrc")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data",help="write a seeded synthetic suite of bag files and a manifest")
    p.add_argument("--spec",type=str,default=None,help="settings file with a 'synthetic' line")
    p.add_argument("--out",type=str,required=True)
    p.add_argument("--seed",type=int,default=0)

    def add_run_args(p):
        p.add_argument("--manifest",type=str,required=True)
        p.add_argument("--seed",type=int,default=0)
        p.add_argument("--out",type=str,required=True)
        p.add_argument("--q",type=float,default=None,help="attention filtering percentile")
        p.add_argument("--no-abf",dest="no_abf",action="store_true",help="fit families on all instances")
        p.add_argument("--buffer",type=int,default=None,help="buffer capacity in bags")
        p.add_argument("--emb-k",dest="emb_k",type=int_list,default=None,metavar="K,K,...")
        p.add_argument("--count-k",dest="count_k",type=int_list,default=None,metavar="K,K,...")
        p.add_argument("--ilm",type=str,choices=["seen","all"],default=None)
        p.add_argument("--n-jobs",dest="n_jobs",type=int,default=1,help="threads for test-set evaluation")

    p = sub.add_parser("run",help="run one strategy over a sequence")
    p.add_argument("--strategy",type=str,required=True,choices=STRATEGIES + RESERVED_STRATEGIES)
    add_run_args(p)
    p.add_argument("--resume",action="store_true",help="continue from the families and checkpoints in --out")

    p = sub.add_parser("report",help="print ACC / ILM / BWT from a matrix.csv")
    p.add_argument("--matrix",type=str,required=True)
    p.add_argument("--ilm",type=str,choices=["seen","all"],default=None)

    p = sub.add_parser("dump-attention",help="per-instance attention of a checkpoint as CSV")
    p.add_argument("--manifest",type=str,required=True)
    p.add_argument("--checkpoint",type=str,required=True)
    p.add_argument("--out",type=str,required=True)
    p.add_argument("--split",type=str,choices=["train","test","all"],default="all")

    p = sub.add_parser("compare",help="run several strategies on the same sequence and seed")
    p.add_argument("--strategies",type=str,default=",".join(STRATEGIES))
    add_run_args(p)

    p = sub.add_parser("ablate",help="aglr with and without attention-based filtering")
    add_run_args(p)

    return parser

def load_settings(commands):
    settings = AglrSettings()
    for f in [Path.home() / ".aglrrc", Path(".aglrrc")]:
        try:
            parse_file(str(f), settings)
        except IOError:
            pass
    parse_commands(commands, settings)
    return settings

def _apply_run_flags(settings, args):
    if args.q is not None:
        settings["replay"]["q"] = args.q
    if args.no_abf:
        settings["replay"]["abf"] = False
    if args.emb_k is not None:
        settings["replay"]["emb_k"] = args.emb_k
    if args.count_k is not None:
        settings["replay"]["count_k"] = args.count_k
    if args.buffer is not None:
        settings["buffer"]["size"] = args.buffer
    if args.ilm is not None:
        settings["metrics"]["ilm"] = args.ilm

def _settings_echo(settings):
    fout = io.StringIO()
    settings.write(fout)
    return fout.getvalue()

def _makedirs(path):
    if not os.path.isdir(path):
        os.makedirs(path)

def _format_value(v):
    return "-" if v is None else "{:.4f}".format(v)

def print_report(report, label=None, fout=None):
    if fout is None:
        fout = sys.stdout
    if label is not None:
        print(label, file=fout)
    print("{:<12s} {:>10s} {:>10s} {:>10s}".format("metric", "ACC", "ILM", "BWT"), file=fout)
    for metric in METRICS:
        v = report[metric]
        print("{:<12s} {:>10s} {:>10s} {:>10s}".format(metric, _format_value(v["ACC"]), _format_value(v["ILM"]),
                                                       _format_value(v["BWT"])), file=fout)

################################################################################

def cmd_gen_data(settings, args):
    if args.spec is not None:
        parse_file(args.spec, settings)
    spec = settings.synthetic_spec()
    episodes = generate_suite(spec, RngStream(args.seed, "gen-data"))
    manifest = write_suite(episodes, args.out, spec.name)
    if settings.verbose:
        sys.stderr.write("wrote {} episodes of {} to {}\n".format(len(episodes), spec, args.out))
    print(manifest)
    return 0

def _last_completed(out, T, strategy):
    """largest k such that checkpoints (and, for aglr, families) 1..k all exist"""
    k = 0
    while k < T:
        t = k + 1
        if not os.path.exists(os.path.join(out, "checkpoints", "params_t{}.npz".format(t))):
            break
        if strategy.name == "aglr" and not os.path.exists(os.path.join(out, "families", "family_t{}.npz".format(t))):
            break
        k = t
    return k

def _resume_state(out, spec, strategy, threshold, n_jobs):
    k = _last_completed(out, spec.T, strategy)
    if k == 0:
        return None
    params = [read_checkpoint(os.path.join(out, "checkpoints", "params_t{}.npz".format(t))) for t in range(1, k + 1)]
    families = []
    if strategy.name == "aglr":
        families = [read_family(os.path.join(out, "families", "family_t{}.npz".format(t))) for t in range(1, k + 1)]
    # evaluation uses no randomness, so completed rows are recomputed from their checkpoints
    rows = [evaluate_row(p, spec.episodes, threshold, n_jobs) for p in params]
    return { "start" : k, "params" : params[-1], "families" : families, "rows" : rows }

def execute_run(settings, spec, strategy_name, out, n_jobs=1, resume=False):
    """run one strategy, persisting families and checkpoints as it goes; returns the RunResult"""
    _makedirs(os.path.join(out, "checkpoints"))
    strategy = Strategy(strategy_name, buffer_size=settings.buffer_size, replay_config=settings.replay_config())
    if resume and (strategy.buffer_policy is not None or strategy.name == "joint"):
        raise ValueError("strategy '{}' keeps a buffer or trains once and cannot be resumed".format(strategy.name))
    if strategy.name == "aglr":
        _makedirs(os.path.join(out, "families"))
    echo = _settings_echo(settings)
    with open(os.path.join(out, "settings.aglrrc"), "w") as fout:
        fout.write(echo)

    threshold = settings["metrics"]["threshold"]
    resume_state = _resume_state(out, spec, strategy, threshold, n_jobs) if resume else None
    if resume_state is not None and settings.verbose:
        sys.stderr.write("resuming {} after session {}\n".format(strategy.name, resume_state["start"]))

    def on_episode(t, params, family, row):
        write_checkpoint(os.path.join(out, "checkpoints", "params_t{}.npz".format(t)), params)
        if family is not None:
            write_family(os.path.join(out, "families", "family_t{}.npz".format(t)), family)

    if resume_state is not None and resume_state["start"] >= spec.T:
        return _finish_without_training(spec, strategy, resume_state, settings, echo, out)

    result = run_sequence(spec, strategy, settings.train_config(), RngStream(spec.seed, "run"), settings.em_config(),
                          ilm_variant=settings["metrics"]["ilm"], threshold=threshold, n_jobs=n_jobs,
                          verbose=settings.verbose, on_episode=on_episode, resume=resume_state, config_echo=echo)
    write_matrix_csv(os.path.join(out, "matrix.csv"), result.matrix)
    write_report_csv(os.path.join(out, "report.csv"), result.report)
    return result

def _finish_without_training(spec, strategy, resume_state, settings, echo, out):
    matrix = TrainTestMatrix(spec.T)
    for (i, row) in enumerate(resume_state["rows"]):
        for j in range(spec.T):
            matrix.set(i, j, row[j])
    report = cl_report(matrix, settings["metrics"]["ilm"])
    result = RunResult(matrix, report, strategy, [], family_sizes=[f.n_components() for f in resume_state["families"]],
                       families=resume_state["families"], checkpoints=[resume_state["params"]], config_echo=echo)
    write_matrix_csv(os.path.join(out, "matrix.csv"), result.matrix)
    write_report_csv(os.path.join(out, "report.csv"), result.report)
    return result

def _load_spec(args):
    (name, dim, episodes) = load_episodes(args.manifest)
    return SequenceSpec(name, episodes, args.seed)

def cmd_run(settings, args):
    _apply_run_flags(settings, args)
    spec = _load_spec(args)
    result = execute_run(settings, spec, args.strategy, args.out, args.n_jobs, args.resume)
    print_report(result.report, "{} on {} (seed {})".format(args.strategy, spec.name, spec.seed))
    return 0

def cmd_report(settings, args):
    matrix = read_matrix_csv(args.matrix)
    ilm = args.ilm if args.ilm is not None else settings["metrics"]["ilm"]
    print_report(cl_report(matrix, ilm))
    return 0

def cmd_dump_attention(settings, args):
    (name, dim, episodes) = load_episodes(args.manifest)
    params = read_checkpoint(args.checkpoint)
    scored = []
    for ep in episodes:
        bags = (ep.train if args.split != "test" else []) + (ep.test if args.split != "train" else [])
        scored.extend((b.bag_id, attention_scores(b, params)) for b in bags)
    write_attention_csv(args.out, scored)
    return 0

def cmd_compare(settings, args):
    _apply_run_flags(settings, args)
    names = [s.strip() for s in args.strategies.split(",") if len(s.strip()) > 0]
    for s in names:
        if s not in STRATEGIES + RESERVED_STRATEGIES:
            raise UsageError("unknown strategy '{}' in --strategies".format(s))
    spec = _load_spec(args)
    rows = []
    for s in names:
        result = execute_run(settings, spec, s, os.path.join(args.out, s), args.n_jobs)
        rows.append((s, result.report, PAST_RAW_DATA[s]))
        print_report(result.report, "{} on {} (seed {})".format(s, spec.name, spec.seed))
    _makedirs(args.out)
    write_summary_csv(os.path.join(args.out, "comparison.csv"), "strategy", rows)
    return 0

def cmd_ablate(settings, args):
    _apply_run_flags(settings, args)
    spec = _load_spec(args)
    rows = []
    for (arm, abf) in (("with_abf", True), ("without_abf", False)):
        settings["replay"]["abf"] = abf
        result = execute_run(settings, spec, "aglr", os.path.join(args.out, arm), args.n_jobs)
        rows.append((arm, result.report))
        print_report(result.report, "aglr {} on {} (seed {})".format(arm, spec.name, spec.seed))
    _makedirs(args.out)
    write_summary_csv(os.path.join(args.out, "ablation.csv"), "arm", rows)
    return 0

COMMANDS = { "gen-data" : cmd_gen_data, "run" : cmd_run, "report" : cmd_report, "dump-attention" : cmd_dump_attention,
             "compare" : cmd_compare, "ablate" : cmd_ablate }

def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("aglr: error: a subcommand is required\n")
        return 2

    try:
        settings = load_settings(args.execute)
        return COMMANDS[args.command](settings, args)
    except ArgumentParserHelp:
        return 0
    except (ArgumentParserError, UsageError) as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write("aglr: error: {}\n".format(re.sub(r'\s+', ' ', str(e))))
        return 2
    except Exception as e:
        sys.stderr.write("aglr: error: {}\n".format(re.sub(r'\s+', ' ', str(e))))
        return 1
