"""
Hybrid AC/DC scenario runner
1. Load and validate the scenario
2. Solve the starting equilibrium
3. Integrate the closed loop
4. Certify the trajectory against the per-segment equilibria
5. Export trajectory, certificate and summary

Usage:
    python scenario_cli.py run scenarios/t1.json --mode secondary --out runs/
    python scenario_cli.py preset case-study --out scenarios/case_study.json
    python scenario_cli.py sweep scenarios/t1.json --param dc_resistance_scale --values 1,0.1,0.01

Exit codes: 0 success, 1 certificate violation, 2 input error, 3 numerical failure
"""

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd

from certification import CertificateReport, certify_trajectory, transient_metrics
from controllers import MODES, ControllerGains
from dynamics import Trajectory, integrate, stable_time_step, zero_state
from errors import ConfigError, HybridGridError, NetworkError, NumericalError, ScenarioError
from network_model import validate_network
from scenario import (
    START_EQUILIBRIUM,
    SWEEP_PARAMETERS,
    Scenario,
    apply_parameter,
    dump_scenario,
    parse_scenario,
    preset_case_study,
)
from steady_state import (
    EquilibriumPoint,
    dispatch_for,
    equilibrium_summary,
    find_equilibrium,
    generation_vector,
    power_sharing_error,
    segment_equilibria,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CERTIFICATE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


@dataclass
class RunResult:
    name: str
    mode: str
    exit_code: int
    summary: Dict[str, float] = field(default_factory=dict)
    trajectory: Optional[Trajectory] = None
    equilibria: List[EquilibriumPoint] = field(default_factory=list)
    report: Optional[CertificateReport] = None
    error: str = ""
    artifacts: List[str] = field(default_factory=list)


def exit_code_for(error: Exception) -> int:
    if isinstance(error, (NetworkError, ConfigError, ScenarioError)):
        return EXIT_INPUT
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_INPUT


def subdivide_step(dt: float, dt_stable: float) -> int:
    """Smallest integer n with dt / n inside the RK4 stability bound"""
    if not math.isfinite(dt_stable) or dt <= dt_stable:
        return 1
    return int(math.ceil(dt / dt_stable))


def final_summary(traj: Trajectory, scenario: Scenario) -> Dict[str, float]:
    """Final omega per AC bus, final V_bar per DC subsystem, sharing error and transients"""
    net = traj.net
    loads = scenario.disturbances.final_loads(net)
    omega = traj.omega_ac()[-1]
    summary = {f"omega:{b}": float(w) for b, w in zip(net.ac_buses, omega)}
    summary.update({f"vbar:{k}": float(v) for k, v in zip(net.dc_subsystem_names, traj.v_bar[-1])})
    p_final = generation_vector(net, traj.p_gen[-1], traj.p_dc[-1])
    dispatch = dispatch_for(net, loads, traj.omega_g[-1])
    summary["sharing_error"] = power_sharing_error(p_final, dispatch)
    summary.update(transient_metrics(traj))
    return summary


def run_scenario(scenario: Scenario, out_dir: Optional[Path] = None,
                 tol_conv: float = 1e-6, echo: bool = True) -> RunResult:
    """
    Validate, integrate and certify one scenario

    Args:
        scenario: Parsed scenario
        out_dir: Directory for the CSV and text artifacts (nothing written if None)
        tol_conv: Terminal convergence tolerance of the certificate
        echo: Print step banners to stdout

    Returns:
        RunResult; errors are captured in exit_code and error
    """
    say = print if echo else (lambda *a, **k: None)
    cfg = scenario.controllers
    result = RunResult(name=scenario.name, mode=cfg.mode, exit_code=EXIT_OK)
    try:
        say("Step 1: Validating network...")
        net = validate_network(scenario.network)
        gains = ControllerGains(cfg, net)
        say(f"[OK] {len(net.ac_buses)} AC buses, {net.n_dc} DC buses, "
            f"{net.n_conv} converters, mode {cfg.mode}")

        say("Step 2: Solving starting point...")
        t0 = 0.0
        if scenario.sim.start == START_EQUILIBRIUM:
            start = find_equilibrium(net, gains, net.nominal_loads())
            initial = start.state
            say(f"[OK] Equilibrium found in {start.iterations} iterations "
                f"(residual {start.residual_norm:.2e})")
        else:
            initial = zero_state(net, gains.mode)
            say("[OK] Starting from zero deviations")

        dt = scenario.sim.dt
        n_sub = subdivide_step(dt, stable_time_step(initial, net, gains))
        if n_sub > 1:
            logger.warning("dt=%g s outside the RK4 stability bound; using %d substeps", dt, n_sub)
            say(f"[WARNING] dt subdivided by {n_sub} for stability")

        say(f"Step 3: Integrating to t = {scenario.sim.t_end:g} s...")
        traj = integrate(initial, net, gains, scenario.disturbances, scenario.sim.t_end,
                         dt=dt / n_sub, record_every=scenario.sim.record_every * n_sub)
        result.trajectory = traj
        say(f"[OK] {len(traj)} samples recorded")

        say("Step 4: Certifying trajectory...")
        eqs = segment_equilibria(net, gains, scenario.disturbances, t0, dt / n_sub)
        result.equilibria = eqs
        report = certify_trajectory(traj, eqs, net, gains, tol_conv=tol_conv)
        result.report = report
        result.summary = final_summary(traj, scenario)
        if report.passed:
            say("[OK] Certificate passed")
        else:
            say(f"[WARNING] Certificate failed: {', '.join(report.failed_checks())}")
            result.exit_code = EXIT_CERTIFICATE

        if out_dir is not None:
            say("Step 5: Writing outputs...")
            result.artifacts = write_artifacts(scenario, result, Path(out_dir))
            for path in result.artifacts:
                say(f"[OK] {path}")
    except HybridGridError as e:
        result.exit_code = exit_code_for(e)
        result.error = f"{type(e).__name__}: {e}"
        logger.debug("run failed", exc_info=True)
    return result


def write_artifacts(scenario: Scenario, result: RunResult, out_dir: Path) -> List[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}_{result.mode}"
    written = []
    if "trajectory" in scenario.outputs:
        written.append(result.trajectory.to_csv(out_dir / f"{stem}_trajectory.csv"))
    if "certificate" in scenario.outputs:
        written.append(result.report.to_csv(out_dir / f"{stem}_certificate.csv"))
    if "equilibrium" in scenario.outputs:
        net = result.trajectory.net
        rows = []
        for k, eq in enumerate(result.equilibria):
            error, omega_max, vbar_max = equilibrium_summary(eq, net)
            rows.append({"segment": k, "residual_norm": eq.residual_norm,
                         "iterations": eq.iterations, "security_ok": eq.security_ok,
                         "error": error, "omega_max": omega_max, "vbar_max": vbar_max})
        path = out_dir / f"{stem}_equilibrium.csv"
        pd.DataFrame(rows).to_csv(path, index=False, float_format="%.12e", encoding="utf-8")
        written.append(str(path))
    if "summary" in scenario.outputs:
        path = out_dir / f"{stem}_summary.txt"
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"Scenario: {scenario.name} ({result.mode})\n\n")
            for key, value in result.summary.items():
                f.write(f"{key:<24} {value: .12e}\n")
            f.write("\n")
            f.write(result.report.summary())
        written.append(str(path))
    return written


def print_summary(result: RunResult):
    print()
    print("=" * 60)
    print(f"Summary: {result.name} ({result.mode})")
    print("=" * 60)
    for key, value in result.summary.items():
        print(f"  {key:<24} {value: .6e}")
    if result.report is not None:
        print()
        print(result.report.summary(), end="")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _override(scenario: Scenario, args) -> Scenario:
    cfg, sim = scenario.controllers, scenario.sim
    if getattr(args, "mode", None):
        cfg = cfg.with_mode(args.mode)
    if getattr(args, "delay", None) is not None:
        cfg = replace(cfg, comm_delay=args.delay)
    if getattr(args, "t_end", None) is not None:
        sim = replace(sim, t_end=args.t_end)
    if getattr(args, "dt", None) is not None:
        sim = replace(sim, dt=args.dt)
    return replace(scenario, controllers=cfg, sim=sim)


def cmd_run(args) -> int:
    print("=" * 60)
    print("Hybrid AC/DC Scenario Run")
    print("=" * 60)
    try:
        scenario = _override(parse_scenario(args.scenario), args)
    except (HybridGridError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INPUT
    print(f"[OK] Loaded scenario '{scenario.name}'")
    result = run_scenario(scenario, Path(args.out) if args.out else None, tol_conv=args.tol_conv)
    if result.error:
        print(f"[ERROR] {result.error}", file=sys.stderr)
        return result.exit_code
    print_summary(result)
    return result.exit_code


def cmd_preset(args) -> int:
    scenario = preset_case_study(delay=args.delay, mode=args.mode or "primary")
    text = dump_scenario(scenario, args.out)
    if args.out:
        print(f"[OK] Wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _sweep_point(task):
    scenario, param, value, out_dir, tol_conv = task
    row = {"param": param, "value": value}
    try:
        point = apply_parameter(scenario, param, value)
    except HybridGridError as e:
        row.update(exit_code=exit_code_for(e), error=str(e))
        return row
    point_dir = Path(out_dir) / f"{param}={value:g}" if out_dir else None
    result = run_scenario(point, point_dir, tol_conv=tol_conv, echo=False)
    row["exit_code"] = result.exit_code
    row["certificate"] = "PASS" if result.report is not None and result.report.passed else "FAIL"
    row.update(result.summary)
    row["error"] = result.error
    return row


def run_sweep(scenario: Scenario, param: str, values: Sequence[float], out_dir=None,
              jobs: int = 1, tol_conv: float = 1e-6) -> pd.DataFrame:
    """One row per value: exit code, certificate status, final deviations, sharing error"""
    if param not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter '{param}'")
    tasks = [(scenario, param, float(v), out_dir, tol_conv) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    return pd.DataFrame(rows)


def cmd_sweep(args) -> int:
    print("=" * 60)
    print(f"Sweep over {args.param}")
    print("=" * 60)
    try:
        scenario = _override(parse_scenario(args.scenario), args)
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values is empty")
        print(f"Step 1: Running {len(values)} points (jobs={args.jobs})...")
        table = run_sweep(scenario, args.param, values, args.out, args.jobs, args.tol_conv)
    except ValueError as e:
        print(f"[ERROR] bad --values: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (HybridGridError, OSError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_INPUT

    for row in table.to_dict("records"):
        status = "[OK]" if row["exit_code"] == EXIT_OK else "[WARNING]"
        detail = row.get("error") or f"sharing error {row.get('sharing_error', float('nan')):.3e}"
        print(f"{status} {args.param}={row['value']:g}: {detail}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"sweep_{args.param}.csv"
        table.to_csv(path, index=False, float_format="%.12e", encoding="utf-8")
        print(f"[OK] {path}")
    else:
        print(table.to_string(index=False))
    return int(table["exit_code"].max())


def create_cli_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Hybrid AC/DC network scenario runner",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python scenario_cli.py run scenarios/t1.json --mode primary
  python scenario_cli.py run scenarios/case_study.json --mode secondary --delay 0.2 --out runs/
  python scenario_cli.py preset case-study --out scenarios/case_study.json
  python scenario_cli.py sweep scenarios/t1.json --param dc_resistance_scale --values 1,0.1,0.01
        """,
    )
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("scenario", help="Scenario JSON file")
        p.add_argument("--mode", choices=MODES, help="Controller family")
        p.add_argument("--t-end", type=float, help="Final time (s)")
        p.add_argument("--dt", type=float, help="Integration step (s)")
        p.add_argument("--delay", type=float, help="Communication delay (s)")
        p.add_argument("--out", help="Output directory")
        p.add_argument("--jobs", type=int, default=1, help="Parallel sweep points")
        p.add_argument("--tol-conv", type=float, default=1e-6,
                       help="Terminal convergence tolerance (default: 1e-6)")

    run = sub.add_parser("run", help="Run one scenario")
    overrides(run)
    run.set_defaults(func=cmd_run)

    preset = sub.add_parser("preset", help="Emit a bundled preset scenario")
    preset.add_argument("name", choices=["case-study"])
    preset.add_argument("--out", help="Output file (default: stdout)")
    preset.add_argument("--mode", choices=MODES, help="Controller family")
    preset.add_argument("--delay", action="store_true", help="Add a 200 ms communication delay")
    preset.set_defaults(func=cmd_preset)

    sweep = sub.add_parser("sweep", help="Run a scenario over a list of parameter values")
    overrides(sweep)
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sweep.add_argument("--values", required=True, help="Comma separated values")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = create_cli_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
