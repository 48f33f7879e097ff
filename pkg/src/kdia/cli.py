"""Command-line harness: run experiments, sweep one axis, compute feature
similarity, verify gradients, and run the plain-FedAvg reference.

Flags mirror configuration keys in kebab-case; ``--config`` points at a flat
key=value file and explicit flags win over it.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import generator, gradcheck, harness, nn, orchestrator, trainer
from .config import ExperimentConfig, parse_config
from .errors import ConfigError

_BOOL_FIELDS = {
    f.name for f in dataclasses.fields(ExperimentConfig) if f.type == "bool"
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    for f in dataclasses.fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in _BOOL_FIELDS:
            parser.add_argument(flag, action="store_true", default=None, dest=f.name)
        else:
            parser.add_argument(flag, type=str, default=None, dest=f.name, metavar="V")


def _collect_config(args) -> ExperimentConfig:
    overrides = {}
    for f in dataclasses.fields(ExperimentConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            overrides[f.name] = value
    return parse_config(args.config, overrides)


def _cmd_run(args) -> int:
    cfg = _collect_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    for seed in cfg.seeds:
        hook = None
        if args.checkpoint_interval > 0:
            ckpt_dir = os.path.join(args.out_dir, f"checkpoints-seed{seed}")
            os.makedirs(ckpt_dir, exist_ok=True)

            def hook(t, state, rec, _dir=ckpt_dir):
                if (t + 1) % args.checkpoint_interval == 0:
                    nn.save_checkpoint(
                        state.student, os.path.join(_dir, f"student-{t:04d}.ckpt")
                    )
                    if state.teacher is not None:
                        nn.save_checkpoint(
                            state.teacher, os.path.join(_dir, f"teacher-{t:04d}.ckpt")
                        )
                    if state.gen is not None:
                        nn.save_checkpoint(
                            state.gen, os.path.join(_dir, f"generator-{t:04d}.ckpt")
                        )

        result = orchestrator.run_experiment(cfg, seed, round_hook=hook)
        path = os.path.join(args.out_dir, f"run-seed{seed}.csv")
        harness.write_metrics(result.metrics, path)
        print(
            f"seed {seed}: best student {result.best_student_acc:.4f}, "
            f"best teacher {result.best_teacher_acc:.4f}, "
            f"final model: {result.final_model_kind} -> {path}"
        )
    return 0


def _typed_values(axis: str, raw: str):
    parts = [v.strip() for v in raw.split(",") if v.strip()]
    if axis == "N":
        return [int(v) for v in parts]
    if axis in ("C", "beta"):
        return [float(v) for v in parts]
    return parts


def _cmd_sweep(args) -> int:
    cfg = _collect_config(args)
    values = _typed_values(args.axis, args.values)
    written = harness.sweep(cfg, args.axis, values, args.out_dir)
    for value, per_seed in written.items():
        for seed, path in per_seed.items():
            print(f"{args.axis}={value} seed={seed} -> {path}")
    return 0


def _cmd_similarity(args) -> int:
    cfg = _collect_config(args)
    seed = cfg.seeds[0]
    state = orchestrator.build_state(cfg, seed)
    # reference is trained centrally on the pooled training split
    reference = harness.train_centralized_reference(
        state.train_ds, cfg, seed=seed, epochs=args.reference_epochs
    )
    ref_acc = trainer.evaluate(reference, state.test_ds.features, state.test_ds.labels)
    if args.gen_checkpoint:
        gen = nn.load_checkpoint(args.gen_checkpoint)
    else:
        result = orchestrator.run_experiment(cfg, seed)
        gen = result.state.gen
        if gen is None:
            raise ConfigError("generator disabled; nothing to compare")
    sims = harness.feature_similarity(gen, reference, state.train_ds, seed=seed)
    print(f"centralized reference accuracy: {ref_acc:.4f}")
    for c, s in enumerate(sims):
        print(f"class {c}: mean cosine similarity {s:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("class,mean_cosine\n")
            for c, s in enumerate(sims):
                fh.write(f"{c},{s:.6f}\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = {"dense+relu": 0.0, "softmax-ce": 0.0, "kd": 0.0, "diversity": 0.0}
    for _ in range(args.instances):
        widths = [int(rng.integers(2, 6)) for _ in range(3)]
        model = nn.he_uniform_init(widths, 1, rng)
        x = rng.normal(size=(4, widths[0]))
        y = rng.integers(0, widths[-1], size=4)

        def loss_fn(p):
            return nn.softmax_ce_loss(nn.forward(p, x), y)[0]

        _, grad_logits = nn.softmax_ce_loss(nn.forward(model, x), y)
        analytic = nn.backward(model, x, grad_logits)
        numeric = gradcheck.fd_model_grads(loss_fn, model)
        for (agw, agb), (ngw, ngb) in zip(analytic.layers, numeric):
            worst["dense+relu"] = max(
                worst["dense+relu"],
                gradcheck.max_relative_error(agw, ngw),
                gradcheck.max_relative_error(agb, ngb),
            )

        tau = float(rng.uniform(0.5, 5.0))
        logits = rng.normal(size=(5, 4))
        labels = rng.integers(0, 4, size=5)
        _, g = nn.softmax_ce_loss(logits, labels, tau)
        num = gradcheck.fd_array_grad(
            lambda z: nn.softmax_ce_loss(z, labels, tau)[0], logits
        )
        worst["softmax-ce"] = max(worst["softmax-ce"], gradcheck.max_relative_error(g, num))

        t_logits = rng.normal(size=(5, 4))
        _, g = trainer.kd_loss(logits, t_logits, tau, 0.5)
        num = gradcheck.fd_array_grad(
            lambda z: trainer.kd_loss(z, t_logits, tau, 0.5)[0], logits
        )
        worst["kd"] = max(worst["kd"], gradcheck.max_relative_error(g, num))

        noise = rng.normal(size=(6, 3))
        feats = rng.normal(size=(6, 4))
        _, g = generator.diversity_loss(noise, feats, eps=1e-3)
        num = gradcheck.fd_array_grad(
            lambda z: generator.diversity_loss(noise, z, eps=1e-3)[0], feats
        )
        worst["diversity"] = max(worst["diversity"], gradcheck.max_relative_error(g, num))

    failed = False
    for name, err in worst.items():
        limit = 1e-4 if name == "dense+relu" else 1e-5
        ok = err < limit
        failed |= not ok
        print(f"{name}: max relative error {err:.3e} (limit {limit:.0e}) "
              f"{'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


def _cmd_fedavg_ref(args) -> int:
    cfg = _collect_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    for seed in cfg.seeds:
        run = orchestrator.fedavg_reference(cfg, seed)
        records = [
            orchestrator.RoundMetrics(
                round=t,
                student_acc=acc,
                teacher_acc=0.0,
                loss_ce=0.0,
                loss_kd=0.0,
                loss_gen=0.0,
                var_f_intv=0.0,
                var_f_part=0.0,
                var_f_num=0.0,
                selected=sel,
            )
            for t, (acc, sel) in enumerate(zip(run.accuracies, run.selected_sets))
        ]
        path = os.path.join(args.out_dir, f"fedavg-seed{seed}.csv")
        harness.write_metrics(records, path)
        print(f"seed {seed}: best accuracy {max(run.accuracies):.4f} -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdia",
        description="Desk-scale federated-learning simulator with inequitable "
        "teacher/student aggregation and conditional feature generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the full protocol for each seed")
    run_p.add_argument("--config", default=None, help="key=value config file")
    run_p.add_argument("--out-dir", default=".", help="metrics output directory")
    run_p.add_argument(
        "--checkpoint-interval",
        type=int,
        default=0,
        help="save model checkpoints every k rounds (0 disables)",
    )
    _add_config_flags(run_p)
    run_p.set_defaults(func=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="sweep one axis with shared seeds")
    sweep_p.add_argument("--config", default=None)
    sweep_p.add_argument("--axis", required=True, choices=sorted(harness.SWEEP_AXES))
    sweep_p.add_argument("--values", required=True, help="comma-separated values")
    sweep_p.add_argument("--out-dir", default="sweep")
    _add_config_flags(sweep_p)
    sweep_p.set_defaults(func=_cmd_sweep)

    sim_p = sub.add_parser(
        "similarity", help="generated-vs-real feature similarity per class"
    )
    sim_p.add_argument("--config", default=None)
    sim_p.add_argument("--gen-checkpoint", default=None, help="load generator instead of training")
    sim_p.add_argument("--reference-epochs", type=int, default=100)
    sim_p.add_argument("--out", default=None, help="optional CSV output")
    _add_config_flags(sim_p)
    sim_p.set_defaults(func=_cmd_similarity)

    grad_p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    grad_p.add_argument("--instances", type=int, default=50)
    grad_p.add_argument("--seed", type=int, default=0)
    grad_p.set_defaults(func=_cmd_gradcheck)

    ref_p = sub.add_parser("fedavg-ref", help="plain FedAvg reference run")
    ref_p.add_argument("--config", default=None)
    ref_p.add_argument("--out-dir", default=".")
    _add_config_flags(ref_p)
    ref_p.set_defaults(func=_cmd_fedavg_ref)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
