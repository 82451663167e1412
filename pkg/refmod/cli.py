import csv
import functools
import math
import sys
from pathlib import Path

import click
import pydantic
from click_spinner import spinner

from refmod.config import Environment, PlannerKind
from refmod.env_loader import debug_config as show_config_debug
from refmod.env_loader import load_env_file, read_run_config
from refmod.errors import RefmodError, TrainingDivergedError, ValidationError
from refmod.experiments import evaluate, run_track, summarize, write_episodes_csv, write_results_csv
from refmod.global_plan import optimize_offsets, straight_track, to_plan_path
from refmod.pure_pursuit import save_plan_path
from refmod.sim_core import load_obstacle_map
from refmod.svg_report import generate_svg_report
from refmod.td3 import load_checkpoint, save_checkpoint
from refmod.training import CURVE_COLUMNS, Trainer
from refmod.utils import write_manifest

# Load environment variables
load_env_file()


def handle_errors(command):
    """Map validation problems to exit code 1 and runtime failures to exit code 2."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ValidationError, pydantic.ValidationError, FileNotFoundError) as e:
            click.echo(f"❌ Error: {e}", err=True)
            sys.exit(1)
        except RefmodError as e:
            click.echo(f"❌ Runtime error: {e}", err=True)
            sys.exit(2)
        except Exception as e:
            click.secho(f"❌ Unexpected error: {e}", fg="red", err=True)
            sys.exit(2)
    return wrapper


def config_options(command):
    """Options shared by every subcommand that reads a run config."""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='Run config file (key = value)'),
        click.option('--seed', type=int, help='Master seed'),
        click.option('--episodes', type=int, help='Evaluation episodes per condition'),
        click.option('--steps', type=int, help='Training steps'),
        click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Output directory'),
        click.option('--environment', type=click.Choice([e.value for e in Environment]), help='Evaluation world'),
        click.option('--planner', type=click.Choice([p.value for p in PlannerKind]), help='Planner to run'),
        click.option('--checkpoint', type=click.Path(), help='TD3 checkpoint directory'),
        click.option('--workers', type=int, help='Evaluation worker processes'),
        click.option('--debug-config', is_flag=True, help='Show where configuration was loaded from and exit'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def load_config(config_path, debug, **flags):
    """Effective config from defaults, file, REFMOD_* variables and CLI flags; None after --debug-config."""
    names = {"steps": "train_steps"}
    overrides = {names.get(key, key): value for key, value in flags.items() if value is not None}
    cfg, sources = read_run_config(config_path, overrides)
    if debug:
        show_config_debug(cfg, sources, config_path)
        return None
    return cfg


@click.group()
@click.version_option(package_name='refmod')
def main():
    """refmod - pure pursuit with a learned steering modification."""


@main.command()
@config_options
@handle_errors
def train(config_path, debug_config, **flags):
    """Train the steering-modification policy with TD3."""
    cfg = load_config(config_path, debug_config, **flags)
    if cfg is None:
        return
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "train", cfg, {"train_steps": cfg.train_steps})
    click.echo(f"🌲 Training in the {cfg.environment.value} environment for {cfg.train_steps} steps (seed {cfg.seed})")

    trainer = Trainer(cfg)

    def checkpoint_callback(agent, step):
        save_checkpoint(agent, out / "checkpoints" / f"step_{step:07d}")

    with click.progressbar(length=cfg.train_steps, label='🏋️ Training') as bar:
        seen = [0]

        def progress_callback(row):
            bar.update(row.step - seen[0])
            seen[0] = row.step

        try:
            curve = trainer.run(progress_callback, checkpoint_callback)
        except TrainingDivergedError as e:
            dump = out / "divergence_dump.txt"
            dump.write_text(trainer.diagnostic_dump(e), encoding="utf-8")
            click.secho(f"❌ Training diverged at step {trainer.steps}: {e}", fg="red", err=True)
            click.echo(f"📝 Diagnostic dump written to {dump}", err=True)
            sys.exit(2)

    with open(out / "training_curve.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in curve:
            writer.writerow([row.step, f"{row.episode_reward:.6f}", f"{row.success_rate_window:.6f}",
                             f"{row.mean_abs_delta_nn:.6f}"])
    final = save_checkpoint(trainer.agent, out / "checkpoint")
    click.echo(f"📈 {trainer.episodes} episodes, training curve: {out / 'training_curve.csv'}")
    click.echo(f"✅ Checkpoint saved: {final}")


@main.command(name="eval")
@config_options
@handle_errors
def eval_command(config_path, debug_config, **flags):
    """Evaluate a planner with and without obstacles."""
    cfg = load_config(config_path, debug_config, **flags)
    if cfg is None:
        return
    agent = None
    if cfg.planner is PlannerKind.HYBRID:
        if cfg.checkpoint is None:
            raise ValidationError("the hybrid planner needs --checkpoint")
        click.echo(f"📦 Loading checkpoint {cfg.checkpoint}")
        agent = load_checkpoint(cfg.checkpoint)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, "eval", cfg, {"checkpoint": cfg.checkpoint, "episodes": cfg.episodes})

    click.echo(f"🏁 Evaluating {cfg.planner.value} on {cfg.environment.value}: "
               f"{cfg.episodes} episodes per condition, {cfg.workers} worker(s)")
    with click.progressbar(length=2 * cfg.episodes, label='🚗 Running episodes') as bar:
        results = evaluate(cfg, agent, trace_dir=out / "traces", progress_callback=lambda _: bar.update(1))

    summaries = summarize(results)
    write_episodes_csv(results, out / "episodes.csv")
    write_results_csv(summaries, out / "results.csv")

    worst = max(r.friction_excess for r in results)
    click.echo("\n📊 Results (mean time over successful episodes)")
    click.echo(f"{'planner':<14}{'environment':<12}{'obstacles':<11}{'success':>9}{'crash':>7}{'timeout':>9}{'time [s]':>10}")
    for s in summaries:
        time = "-" if math.isnan(s.mean_time) else f"{s.mean_time:.2f}"
        click.echo(f"{s.planner:<14}{s.environment:<12}{str(s.obstacles):<11}{100 * s.success_rate:>8.0f}%"
                   f"{s.crashes:>7}{s.timeouts:>9}{time:>10}")
    if worst > 1e-9:
        click.secho(f"⚠️  Friction limit exceeded by {worst:.3e} m/s^2", fg="yellow")
    click.echo(f"✅ Results written to {out / 'results.csv'}")


@main.command()
@config_options
@handle_errors
def plan(config_path, debug_config, **flags):
    """Optimise a minimum-curvature plan for the configured track."""
    cfg = load_config(config_path, debug_config, **flags)
    if cfg is None:
        return
    if cfg.environment is Environment.FOREST:
        track = straight_track(cfg.forest.forest_length, cfg.forest.forest_width)
    else:
        track = run_track(cfg)
    obstacles = load_obstacle_map(cfg.obstacle_file) if cfg.obstacle_file else None
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    click.echo(f"🗺️ Optimising offsets over {len(track)} track points (margin {cfg.plan_margin:.2f} m)...")
    with spinner():
        result = optimize_offsets(track, obstacles, cfg.plan_margin)
    plan_file = save_plan_path(to_plan_path(track, result.offsets, cfg.track.samples_per_segment), out / "plan.csv")
    write_manifest(out, "plan", cfg, {
        "obstacle_file": cfg.obstacle_file, "cost": repr(result.cost),
        "residual": repr(result.residual), "iterations": result.iterations,
    })
    click.echo(f"📐 Cost {result.cost:.6g}, KKT residual {result.residual:.3e} after {result.iterations} iterations")
    click.echo(f"✅ Plan written to {plan_file}")


@main.command()
@click.argument('episode_files', nargs=-1, required=True, metavar='EPISODES...', type=click.Path(exists=True, dir_okay=False))
@config_options
@handle_errors
def plot(episode_files, config_path, debug_config, **flags):
    """Write trajectory and network-output SVGs for episode CSV files."""
    cfg = load_config(config_path, debug_config, **flags)
    if cfg is None:
        return
    out = Path(cfg.out_dir)
    write_manifest(out, "plot", cfg, {"inputs": " ".join(episode_files)})
    with click.progressbar(episode_files, label='🖨️ Plotting episodes') as files:
        written = [generate_svg_report(path, str(out)) for path in files]
    for trajectory, network in written:
        click.echo(f"✅ {trajectory}")
        click.echo(f"✅ {network}")


if __name__ == "__main__":
    main()
