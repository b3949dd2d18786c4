"""Command-line front end for the labeling pipeline.

Every subcommand reads and writes the JSONL formats of :mod:`contactfield.core`.
Exit status is 0 on success, 1 on a usage or validation error and 2 when a
file cannot be read or written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from contactfield import force_opt, metrics, synth
from contactfield.core import (
    ContactField,
    read_episode,
    read_fields,
    world_to_gripper,
    pose_rotation,
    write_episode,
    write_fields,
    write_ply,
)
from contactfield.errors import ContactFieldError, ValidationError
from contactfield.geometry import batch_distance, load_scene
from contactfield.real_labeling import HeuristicConfig, frame_normals, label_episode_real
from contactfield.sim_labeling import ExtrapolationConfig, label_frame_sim, read_contacts, write_contacts
from contactfield.tactile import (
    CalibrationScale,
    FilterConfig,
    GateConfig,
    Wrench,
    compute_wrench,
    filter_episode,
    load_filter_config,
)

log = logging.getLogger("contactfield")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage errors with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# small helpers

def _dump_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def _load_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None


def _calibration(args):
    if getattr(args, "calibration", None):
        data = _load_json(args.calibration)
        if not isinstance(data, dict) or "scale" not in data:
            raise ValidationError(f"{args.calibration}: expected an object with a 'scale' key")
        return CalibrationScale(float(data["scale"]))
    return CalibrationScale(args.scale)


def _filter_configs(path):
    if path is None:
        return FilterConfig(), GateConfig()
    return load_filter_config(path)


def _apply_table_z(frames, spec):
    if spec == "from-frames":
        missing = [f.time for f in frames if f.table_z is None]
        if missing:
            raise ValidationError(f"--table-z from-frames: frame t={missing[0]} has no table_z")
        return frames
    try:
        z = float(spec)
    except ValueError:
        raise ValidationError(f"--table-z expects a number or 'from-frames', got {spec!r}") from None
    return [replace(f, table_z=z) for f in frames]


def _solver_config(args):
    return force_opt.SolverConfig(max_iters=args.max_iters)


def _sidecar(out):
    p = Path(out)
    return str(p.with_name(p.stem + ".diag.jsonl"))


# --------------------------------------------------------------------------
# subcommands

def cmd_synth(args):
    cfg = synth.load_config(args.config) if args.config else synth.SynthConfig()
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    if args.frames is not None:
        cfg = replace(cfg, episode=replace(cfg.episode, n_frames=args.frames))
    seeds = [cfg.rng_seed + k for k in range(args.episodes)]
    cfgs = [replace(cfg, rng_seed=s) for s in seeds]
    with ThreadPoolExecutor(max(1, args.threads)) as pool:
        episodes = list(pool.map(synth.generate_episode, cfgs))

    def target(path, k):
        if path is None or args.episodes == 1:
            return path
        p = Path(path)
        return str(p.with_name(f"{p.stem}_{k:03d}{p.suffix}"))

    for k, ep in enumerate(episodes):
        write_episode(ep.frames, target(args.out, k))
        times = [f.time for f in ep.frames]
        if args.truth:
            write_fields(target(args.truth, k), times, ep.truth)
        if args.contacts:
            write_contacts(target(args.contacts, k), ep.contacts)
        if args.wrenches:
            _dump_jsonl(target(args.wrenches, k), [
                {"t": t, "force": w.force.tolist(), "torque": w.torque.tolist()}
                for t, w in zip(times, ep.wrenches)
            ])
        if args.calibration_out:
            with open(target(args.calibration_out, k), "w", encoding="utf-8") as fh:
                json.dump({"scale": ep.calibration_scale}, fh)
    log.info("wrote %d episode(s) of %d frames", len(episodes), cfg.episode.n_frames)
    return EXIT_OK


def cmd_filter(args):
    fcfg, _ = _filter_configs(args.filter_config)
    frames = read_episode(args.episode)
    write_episode(filter_episode(frames, fcfg), args.out)
    return EXIT_OK


def cmd_label_sim(args):
    scene = load_scene(args.scene)
    frames = read_episode(args.episode)
    contacts = read_contacts(args.contacts)
    if len(contacts) != len(frames):
        raise ValidationError(f"{len(contacts)} contact records for {len(frames)} frames")
    ext = ExtrapolationConfig(clip_percentile=None if args.no_clip else args.clip_percentile)

    def one(pair):
        frame, cs = pair
        d = batch_distance(scene, frame.tool_points)
        return label_frame_sim(frame.tool_points, d, cs, ext_cfg=ext)

    with ThreadPoolExecutor(max(1, args.threads)) as pool:
        fields = list(pool.map(one, zip(frames, contacts)))
    write_fields(args.out, [f.time for f in frames], fields)
    return EXIT_OK


def cmd_label_real(args):
    frames = _apply_table_z(read_episode(args.episode), args.table_z)
    fcfg, gcfg = (None, GateConfig()) if args.filter_config is None else load_filter_config(args.filter_config)
    if args.gate_threshold is not None:
        gcfg = replace(gcfg, threshold_override=args.gate_threshold)
    heur = HeuristicConfig(epsilon_height=args.epsilon_height, gate=gcfg)
    fields, diags = label_episode_real(
        frames, fcfg, heur, _calibration(args), reg_lambda=args.reg_lambda, reg_eps=args.reg_eps,
        solver_cfg=_solver_config(args), threads=args.threads, return_diagnostics=True,
    )
    write_fields(args.out, [f.time for f in frames], fields)
    _dump_jsonl(args.diagnostics or _sidecar(args.out), [d.to_dict() for d in diags])
    return EXIT_OK


def _candidate_indices(rec, n, lineno):
    c = np.asarray(rec.get("c", []), dtype=np.float64)
    if "indices" in rec:
        idx = np.asarray(rec["indices"], dtype=np.intp)
        if c.shape[0] != idx.shape[0]:
            raise ValidationError(f"candidates line {lineno}: 'indices' and 'c' differ in length")
    else:
        if c.shape[0] != n:
            raise ValidationError(f"candidates line {lineno}: expected {n} probabilities, got {c.shape[0]}")
        idx = np.flatnonzero(c > 0)
        c = c[idx]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"candidates line {lineno}: index out of range")
    return idx, c


def _read_candidates(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path} line {lineno}: invalid JSON ({exc.msg})") from None
            if isinstance(rec, dict) and "labels" in rec:
                rec = rec["labels"]
            if not isinstance(rec, dict):
                raise ValidationError(f"{path} line {lineno}: expected a JSON object")
            out.append((lineno, rec))
    return out


def cmd_solve_forces(args):
    frames = read_episode(args.episode)
    cands = _read_candidates(args.candidates)
    if len(cands) != len(frames):
        raise ValidationError(f"{len(cands)} candidate records for {len(frames)} frames")
    cal = _calibration(args)
    scfg = _solver_config(args)

    def one(pair):
        frame, (lineno, rec) = pair
        idx, c = _candidate_indices(rec, frame.tool_points.shape[0], lineno)
        out = {"t": frame.time, "indices": idx.tolist()}
        if idx.size == 0:
            out.update(forces=[], objective=None, wrench_residual=None, kkt_residual=None,
                       iterations=0, converged=False, status="empty_problem")
            return out
        normals, valid = frame_normals(frame)
        if not valid[idx].all():
            raise ValidationError(f"frame t={frame.time}: candidate without a usable normal")
        rot = pose_rotation(frame.gripper_pose)
        nrm = normals[idx] @ rot
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        problem = force_opt.SocpProblem(
            world_to_gripper(frame.tool_points[idx], frame.gripper_pose), nrm, c,
            compute_wrench(frame.tactile, cal, gripper_pose=frame.gripper_pose),
            args.reg_lambda, args.reg_eps,
        )
        sol = force_opt.solve(problem, scfg)
        out.update(
            forces=(sol.forces @ rot.T).tolist(),
            objective=sol.objective,
            wrench_residual=sol.wrench_residual,
            kkt_residual=sol.kkt_residual,
            iterations=sol.iterations,
            converged=sol.converged,
            status="ok" if sol.converged else "not_converged",
        )
        return out

    with ThreadPoolExecutor(max(1, args.threads)) as pool:
        records = list(pool.map(one, zip(frames, cands)))
    _dump_jsonl(args.out, records)
    return EXIT_OK


def cmd_eval(args):
    _, pred = read_fields(args.pred)
    _, gt = read_fields(args.gt)
    lcfg = metrics.LossConfig()
    report = metrics.evaluate_fields(pred, gt, lcfg, threshold=args.threshold)
    if args.blade_length is not None:
        if args.eff is None or args.max_blade_length is None:
            raise ValidationError("--blade-length needs --eff and --max-blade-length")
        report["eff_norm"] = metrics.eff_norm(args.eff, args.blade_length, args.max_blade_length)
    text = json.dumps(report, indent=2)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_calibrate(args):
    frames = read_episode(args.episode)
    refs = {}
    with open(args.reference, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
                refs[float(rec["t"])] = Wrench(rec["force"], rec["torque"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{args.reference} line {lineno}: bad wrench record ({exc})") from None
    obs, ref = [], []
    for f in frames:
        w = refs.get(float(f.time))
        if w is None:
            continue
        o = compute_wrench(f.tactile, gripper_pose=f.gripper_pose)
        if np.linalg.norm(o.vector()) > 0 and np.linalg.norm(w.vector()) > 0:
            obs.append(o.scaled())
            ref.append(w.scaled())
    if not obs:
        raise ValidationError("no frames with both a nonzero observed and reference wrench")
    # pool the frames as one long wrench so that each frame counts by its magnitude
    obs_n = float(np.linalg.norm(np.concatenate(obs)))
    ref_n = float(np.linalg.norm(np.concatenate(ref)))
    scale = CalibrationScale(ref_n / obs_n)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"scale": scale.scale, "frames": len(obs)}, fh)
    print(json.dumps({"scale": scale.scale, "frames": len(obs)}))
    return EXIT_OK


def cmd_export_ply(args):
    frames = read_episode(args.episode)
    if args.fields:
        _, fields = read_fields(args.fields)
    else:
        fields = [f.labels for f in frames]
        if any(cf is None for cf in fields):
            raise ValidationError("episode has unlabeled frames; pass --fields")
    if len(fields) != len(frames):
        raise ValidationError(f"{len(fields)} fields for {len(frames)} frames")
    k = args.frame
    if not -len(frames) <= k < len(frames):
        raise ValidationError(f"--frame {k} out of range for {len(frames)} frames")
    cf = fields[k]
    if not isinstance(cf, ContactField):
        raise ValidationError("bad field record")
    write_ply(args.out, frames[k].tool_points, cf)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def _add_threads(p):
    p.add_argument("--threads", type=int, default=1, metavar="N",
                   help="worker threads for frame-level parallelism (default 1)")


def _add_calibration(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--scale", type=float, default=1.0,
                   help="tactile calibration gain applied to marker forces (default 1.0)")
    g.add_argument("--calibration", metavar="PATH",
                   help="JSON file with a 'scale' key, as written by 'calibrate' or 'synth --calibration-out'")


def _add_solver(p):
    p.add_argument("--lambda", dest="reg_lambda", type=float, default=0.01,
                   help="ridge weight of the force regularizer (default 0.01)")
    p.add_argument("--eps", dest="reg_eps", type=float, default=1e-3,
                   help="offset added to contact probabilities in the regularizer (default 1e-3)")
    p.add_argument("--max-iters", type=int, default=force_opt.SolverConfig.max_iters,
                   help="ADMM iteration budget per frame")


def build_parser():
    parser = _Parser(prog="contactfield", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", help="generate synthetic scraping episodes with exact ground truth")
    p.add_argument("--config", metavar="PATH", help="generator config (JSON); defaults are used when omitted")
    p.add_argument("--out", required=True, metavar="PATH", help="episode JSONL to write")
    p.add_argument("--truth", metavar="PATH", help="also write ground-truth contact fields")
    p.add_argument("--contacts", metavar="PATH", help="also write per-frame sparse contacts")
    p.add_argument("--wrenches", metavar="PATH", help="also write the injected gripper-frame wrenches")
    p.add_argument("--calibration-out", metavar="PATH", help="also write the tactile calibration gain")
    p.add_argument("--seed", type=int, help="override the config's RNG seed")
    p.add_argument("--frames", type=int, help="override the number of frames per episode")
    p.add_argument("--episodes", type=int, default=1,
                   help="number of episodes (seeds seed, seed+1, ...); outputs get a _NNN suffix when > 1")
    _add_threads(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("filter", help="filter tactile marker channels of an episode")
    p.add_argument("--episode", required=True, metavar="PATH", help="input episode JSONL")
    p.add_argument("--filter-config", metavar="PATH", help="filter settings (YAML or JSON); defaults when omitted")
    p.add_argument("--out", required=True, metavar="PATH", help="filtered episode JSONL to write")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("label-sim", help="label frames from a signed-distance scene and sparse contacts")
    p.add_argument("--scene", required=True, metavar="PATH", help="scene primitives (JSON)")
    p.add_argument("--contacts", required=True, metavar="PATH", help="one JSON array of contacts per frame")
    p.add_argument("--episode", required=True, metavar="PATH", help="input episode JSONL")
    p.add_argument("--out", required=True, metavar="PATH", help="contact-field JSONL to write")
    p.add_argument("--clip-percentile", type=float, default=98.0,
                   help="percentile of force magnitudes used as a cap (default 98)")
    p.add_argument("--no-clip", action="store_true", help="disable magnitude clipping")
    _add_threads(p)
    p.set_defaults(func=cmd_label_sim)

    p = sub.add_parser("label-real", help="pseudo-label frames from tactile wrenches and table height")
    p.add_argument("--episode", required=True, metavar="PATH", help="input episode JSONL")
    p.add_argument("--filter-config", metavar="PATH",
                   help="filter and gate settings; when omitted the episode is used as already filtered")
    p.add_argument("--table-z", default="from-frames", metavar="Z|from-frames",
                   help="table height in meters, or 'from-frames' to use each frame's table_z (default)")
    p.add_argument("--out", required=True, metavar="PATH", help="contact-field JSONL to write")
    p.add_argument("--diagnostics", metavar="PATH",
                   help="per-frame diagnostics JSONL (default: <out stem>.diag.jsonl)")
    p.add_argument("--epsilon-height", type=float, default=0.004,
                   help="height band above the table counted as contact candidates, meters (default 0.004)")
    p.add_argument("--gate-threshold", type=float,
                   help="fixed contact-gate threshold instead of the noise-window estimate")
    _add_calibration(p)
    _add_solver(p)
    _add_threads(p)
    p.set_defaults(func=cmd_label_real)

    p = sub.add_parser("solve-forces", help="solve the cone-constrained force problem for given candidates")
    p.add_argument("--episode", required=True, metavar="PATH", help="input episode JSONL")
    p.add_argument("--candidates", required=True, metavar="PATH",
                   help="per-frame JSONL with 'c' (and optionally 'indices'), or a contact-field file")
    p.add_argument("--out", required=True, metavar="PATH", help="per-frame solution JSONL to write")
    _add_calibration(p)
    _add_solver(p)
    _add_threads(p)
    p.set_defaults(func=cmd_solve_forces)

    p = sub.add_parser("eval", help="compare predicted and reference contact fields")
    p.add_argument("--pred", required=True, metavar="PATH", help="predicted fields JSONL")
    p.add_argument("--gt", required=True, metavar="PATH", help="reference fields JSONL")
    p.add_argument("--report", metavar="PATH", help="write the metrics report (JSON) here")
    p.add_argument("--threshold", type=float, default=0.5, help="probability threshold for F1 (default 0.5)")
    p.add_argument("--eff", type=float, help="scraping efficiency for the normalized efficiency metric")
    p.add_argument("--blade-length", type=float, help="blade length for the normalized efficiency metric")
    p.add_argument("--max-blade-length", type=float, help="largest blade length in the tool set")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="fit the tactile gain against reference wrenches")
    p.add_argument("--episode", required=True, metavar="PATH", help="episode JSONL with raw markers")
    p.add_argument("--reference", required=True, metavar="PATH",
                   help="JSONL of {t, force, torque} reference wrenches in the gripper frame")
    p.add_argument("--out", required=True, metavar="PATH", help="calibration JSON to write")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("export-ply", help="write one frame's contact field as an ASCII PLY")
    p.add_argument("--episode", required=True, metavar="PATH", help="episode JSONL (tool points)")
    p.add_argument("--fields", metavar="PATH", help="contact-field JSONL; the episode's labels when omitted")
    p.add_argument("--frame", type=int, default=0, help="frame index, negative counts from the end (default 0)")
    p.add_argument("--out", required=True, metavar="PATH", help="PLY file to write")
    p.set_defaults(func=cmd_export_ply)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except OSError as exc:
        where = exc.filename or ""
        print(f"contactfield: cannot access {where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except (ContactFieldError, ValueError) as exc:
        print(f"contactfield: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
