"""Command line entry point: ``conmech run|compare|validate``.

Exit codes: 0 success, 2 parse/validation error, 3 admission or rank failure,
4 integration failure.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import runner, scenario
from .errors import AdmissionError, ConmechError, DegenerateConstraintError, StepFailure

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_ADMISSION = 3
EXIT_STEP = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conmech", description="Constrained Lagrangian dynamics scenarios.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="integrate a scenario and write trajectory + summary")
    r.add_argument("file")
    r.add_argument("-o", "--output", required=True, help="output directory")
    c = sub.add_parser("compare", help="run a scenario under two reaction models")
    c.add_argument("file")
    c.add_argument("--model-a", required=True, choices=runner.MODEL_NAMES)
    c.add_argument("--model-b", required=True, choices=runner.MODEL_NAMES)
    c.add_argument("-o", "--output", required=True)
    v = sub.add_parser("validate", help="check a scenario without integrating")
    v.add_argument("file")
    return p


def _execute(args, out) -> int:
    spec = scenario.load(args.file)
    if args.command == "validate":
        for line in runner.validate(spec):
            print(line, file=out)
        return EXIT_OK
    if args.command == "run":
        doc = runner.run(spec, args.output)
        m = doc["metrics"]
        print(f"{spec.name}: {m['samples']} samples, max residual {m['max_residual']:.3e}, "
              f"energy drift {m['energy_drift_rel']:.3e} (rel), wrote {args.output}", file=out)
        return EXIT_OK
    rep = runner.compare(spec, args.model_a, args.model_b, args.output)
    print(f"{spec.name}: {args.model_a} vs {args.model_b}: final divergence {rep['final_divergence']:.6g}, "
          f"max {rep['max_divergence']:.6g}, wrote {args.output}", file=out)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = _parser().parse_args(argv)
    try:
        return _execute(args, out)
    except (AdmissionError, DegenerateConstraintError) as exc:
        print(f"error: inadmissible scenario: {exc}", file=err)
        return EXIT_ADMISSION
    except StepFailure as exc:
        print(f"error: integration failed at t={exc.time}: {exc}", file=err)
        return EXIT_STEP
    except scenario.ScenarioError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_PARSE
    except ConmechError as exc:
        # remaining model errors are data problems detected before or while setting up the run
        print(f"error: {exc}", file=err)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
