import sys
import logging
from pathlib import Path

import pandas as pd

from hmm_icl.context.icl_context import context_to_csv
from hmm_icl.harness.harness import draw_prompt, make_construction, measure_errors, sweep, write_sweep_csv
from hmm_icl.harness.verify import run_verification
from hmm_icl.models.hmm_core import (
    MixtureConfig,
    estimate_gamma,
    hmm_to_json,
    mixture_to_json,
    new_low_rank_hmm,
    new_mixture,
)
from hmm_icl.transformer.construct import assemble_stack
from hmm_icl.transformer.tf_kernel import forward, stack_to_json
from hmm_icl.utils import configure_runtime, load_experiment, run_summary
from hmm_icl.utils.errors import HmmIclError
from hmm_icl.utils.schema import SweepGrid
from hmm_icl.utils.utils import export_to_json, make_rng


def gen_hmm(args) -> int:
    hmm = new_low_rank_hmm(args.num_hidden, args.num_obs, args.rank, args.concentration, args.seed)
    export_to_json(args.out, hmm_to_json(hmm))
    gamma = estimate_gamma(hmm, 256, make_rng(args.seed))
    print(f"Wrote {hmm!r} to {args.out} (gamma estimate {gamma:.4f})")
    return 0


def gen_mixture(args) -> int:
    if args.full_scale:
        config = MixtureConfig.full_scale(seed=args.seed, rank=args.rank)
    else:
        config = MixtureConfig(num_tasks=args.num_tasks, hidden_per_task=args.hidden_per_task, vocab=args.vocab,
                               rank=args.rank, seed=args.seed, concentration=args.concentration)
    # full-scale task matrices are regenerated from their seeds instead of being written out
    export_to_json(args.out, mixture_to_json(new_mixture(config), include_tasks=not args.full_scale))
    print(f"Wrote a mixture of {config.num_tasks} tasks to {args.out}")
    return 0


def build_stack(args) -> int:
    config = load_experiment(args)
    prompt = draw_prompt(config)
    stack, fmap = assemble_stack(make_construction(config, prompt.layout))
    print(f"Assembled {stack.attention_layers} attention layers and {stack.encoder_layers} encoder layers "
          f"(width {stack.width}, {prompt.layout.rows} rows)")
    if args.dump_stack:
        export_to_json(args.dump_stack, stack_to_json(stack))
        print(f"Stack written to {args.dump_stack}")
    if args.trace_layers:
        folder = Path(args.trace_layers)
        folder.mkdir(parents=True, exist_ok=True)
        _, states = forward(prompt.M0, stack, trace=True)
        for index, state in enumerate(states):
            context_to_csv(state, str(folder / f"H_{index:03d}.csv"))
        print(f"{len(states)} residual-stream states written to {folder}")
    return 0


def verify(args) -> int:
    report = run_verification(load_experiment(args), args.num_configs, args.permutations, quiet=args.quiet)
    for check in report.checks:
        print(f"[{'PASS' if check.passed else 'FAIL'}] {check.name}: {check.value:.3e} (threshold {check.threshold:.1e})")
    if args.out:
        export_to_json(args.out, report.to_dict())
    return 0 if report.all_passed else 1


def measure(args) -> int:
    config = load_experiment(args)
    report = measure_errors(config)
    print(f"eps1={report.eps1:.6g} +- {report.eps1_se:.2g}  eps2={report.eps2:.6g} +- {report.eps2_se:.2g}  "
          f"eps3={report.eps3:.6g} +- {report.eps3_se:.2g}  total={report.total:.6g} +- {report.total_se:.2g}")
    if args.out:
        write_sweep_csv(pd.DataFrame([report.to_row()]), args.out, config.seed)
    return 0 if report.triangle_ok else 1


def run_sweep(args) -> int:
    config = load_experiment(args)
    grid = SweepGrid(n=args.n, L=args.L, T=args.T, k=args.k)
    table = sweep(grid, config, quiet=args.quiet, workers=args.workers)
    write_sweep_csv(table, args.out, config.seed)
    failed = int((table["error"] != "").sum())
    print(f"{len(table)} cells written to {args.out} ({failed} failed)")
    return 0 if failed == 0 else 1


HANDLERS = {
    "gen-hmm": gen_hmm,
    "gen-mixture": gen_mixture,
    "build-stack": build_stack,
    "verify": verify,
    "measure": measure,
    "sweep": run_sweep,
}


def main(argv=None):
    try:
        # Parse the command line and set up logging
        args = configure_runtime(argv)
        if args.command is None:
            print("[ERROR] No command given; see hmm-icl --help")
            sys.exit(2)
        run_summary(args)

        code = HANDLERS[args.command](args)

    except HmmIclError as e:
        logging.error(f"{type(e).__name__}: {e}")
        print(f"[ERROR] {type(e).__name__}: {e}")
        code = 2

    except (OSError, ValueError) as e:
        logging.exception(f"Bad input: {e}")
        print(f"[ERROR] {type(e).__name__}: {e}")
        code = 2

    sys.exit(code)


if __name__ == "__main__":
    main()
