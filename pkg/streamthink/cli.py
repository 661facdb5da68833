import argparse
import json
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, TextIO

from streamthink.attention_mask import TokenTypeSequence, build_streaming_mask, format_mask
from streamthink.config import CliConfig, load_config, make_backend, parse_overrides
from streamthink.exceptions import (
    LatencyDivisionError,
    ParameterError,
    RuntimeFailure,
    StreamthinkError,
    ValidationError,
)
from streamthink.kg_synthesis import (
    KgSynthesisConfig,
    generate_synthetic_scenes,
    read_extraction_trace,
    read_scene_clips,
    synthesize_dataset,
)
from streamthink.latency_sim import (
    calibrated_profile,
    compare_paradigms,
    format_comparison,
    read_profile,
    sweep_clip_counts,
)
from streamthink.orchestrator import (
    RealTimeSessionDriver,
    SessionDriver,
    SessionTranscript,
    measure_latency,
    run_session,
    score_answers,
)
from streamthink.rl_objective import group_advantages, objective, read_rollout_group
from streamthink.sft_packer import WordCountEstimator, pack_episode
from streamthink.stream_model import (
    AnswerRecord,
    DeadlinePolicy,
    QueryEvent,
    SessionMode,
    read_frame_trace,
    read_query_trace,
)
from streamthink.utils.file_utils import read_jsonl, write_jsonl
from streamthink.utils.logging_config import configure_logging, logger
from streamthink.utils.string_utils import seconds_to_ms


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so usage errors map to exit code 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _backend_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", "-c", type=str, help="Configuration file of 'key = value' lines")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration key (repeatable)",
    )
    p.add_argument(
        "--backend",
        choices=["mock", "replay", "http", "rate"],
        help="Backend kind (config key backend.kind)",
    )
    p.add_argument("--backend-url", type=str, help="HTTP endpoint (config key backend.url)")
    return p


def _session_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--L", dest="clip_capacity_L", type=int, help="Visual tokens per clip")
    p.add_argument("--max-thinking-times", type=int, help="Maximum thoughts per session")
    p.add_argument(
        "--deadline-policy",
        choices=[policy.value for policy in DeadlinePolicy],
        help="Policy when a clip closes while a thought is generating",
    )
    p.add_argument(
        "--mode",
        choices=[mode.value for mode in SessionMode],
        help="Virtual clock or wall clock",
    )
    p.add_argument("--session-id", default="session-0", help="Session identifier")
    return p


def build_parser() -> argparse.ArgumentParser:
    """
    Build a parser for the CLI.

    Returns:
        argparse.ArgumentParser: A parser object
    """
    p = _Parser(prog="streamthink")
    p.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Diagnostic log level on stderr (default from the streamthink_env variable)",
    )
    p.add_argument("--log-dir", type=Path, help="Also write rotating log files here")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    backend_opts = _backend_options()
    session_opts = _session_options()

    run = sub.add_parser(
        "run", parents=[backend_opts, session_opts], help="Run a session over frame and query traces"
    )
    run.add_argument("--frames", required=True, help="Frame trace (line-delimited records)")
    run.add_argument("--queries", required=True, help="Query trace (line-delimited records)")
    run.add_argument("--output", "-o", help="Transcript destination (default: stdout)")
    run.add_argument("--answers", help="Also write answer records here")
    run.add_argument(
        "--time-scale", type=float, default=1.0, help="Wall seconds per stream second (real_time mode)"
    )

    chat = sub.add_parser(
        "chat",
        parents=[backend_opts, session_opts],
        help="Ask questions on stdin while a frame trace plays",
    )
    chat.add_argument("--frames", help="Frame trace to play (default: no video)")
    chat.add_argument(
        "--advance",
        type=float,
        default=1.0,
        help="Stream seconds the virtual clock advances per question without '@<seconds>'",
    )
    chat.add_argument(
        "--time-scale", type=float, default=1.0, help="Wall seconds per stream second (real_time mode)"
    )
    chat.add_argument(
        "--timeout", type=float, default=120.0, help="Seconds to wait for an answer (real_time mode)"
    )

    latency = sub.add_parser(
        "simulate-latency", help="Compare streaming thinking against post-query reasoning"
    )
    latency.add_argument("--profile", help="Latency profile JSON (default: packaged calibration)")
    latency.add_argument(
        "--clip-counts",
        help="Comma-separated clip counts for an extra streaming-latency sweep",
    )

    mask = sub.add_parser("mask", help="Print the streaming attention mask")
    mask.add_argument("--types", required=True, help="Token types, e.g. VVTV")
    mask.add_argument("--L", dest="window", type=int, required=True, help="Visual window size")

    pack = sub.add_parser("pack", help="Pack episodes into SFT segments")
    pack.add_argument("--episode", required=True, help="Episode records (line-delimited)")
    pack.add_argument("--max-tokens", type=int, required=True, help="Token budget per segment")
    pack.add_argument(
        "--tokens-per-word", type=float, default=1.3, help="Token estimate per whitespace word"
    )
    pack.add_argument("--output", "-o", help="Destination (default: stdout)")

    synth = sub.add_parser(
        "synthesize", parents=[backend_opts], help="Synthesize multi-hop streaming QA data"
    )
    source = synth.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenes", help="Scene clips (line-delimited records)")
    source.add_argument("--synthetic", type=int, help="Generate this many synthetic scenes")
    synth.add_argument("--extractions", help="Recorded extraction trace")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.add_argument("--seed", type=int, default=0, help="Sampling seed")
    synth.add_argument("--chains", type=int, default=20, help="Evidence chains to sample")
    synth.add_argument("--window", type=int, default=4, help="Entity bank window size")

    rl = sub.add_parser("rl-check", help="Print group advantages and the objective of a rollout group")
    rl.add_argument("--rollouts", required=True, help="Rollout records (line-delimited)")
    rl.add_argument("--eps-low", type=float, default=0.2, help="Lower clip bound")
    rl.add_argument("--eps-high", type=float, default=0.28, help="Upper clip bound")
    rl.add_argument("--beta", type=float, default=0.001, help="KL weight")
    return p


def _cli_config(args: argparse.Namespace) -> CliConfig:
    overrides = parse_overrides(args.overrides)
    flags = {
        "clip_capacity_L": getattr(args, "clip_capacity_L", None),
        "max_thinking_times": getattr(args, "max_thinking_times", None),
        "deadline_policy": getattr(args, "deadline_policy", None),
        "mode": getattr(args, "mode", None),
        "backend.kind": args.backend,
        "backend.url": args.backend_url,
    }
    overrides.update({key: str(value) for key, value in flags.items() if value is not None})
    return load_config(args.config, overrides)


def _emit(record: Dict, stream: TextIO) -> None:
    stream.write(json.dumps(record, ensure_ascii=False) + "\n")
    stream.flush()


def _run_real_time(config: CliConfig, backend, frames, queries, args) -> tuple:
    driver = RealTimeSessionDriver(
        config.session, backend, frames, session_id=args.session_id, time_scale=args.time_scale
    )
    driver.start()
    indices = []
    started = time.monotonic()
    for query in sorted(queries, key=lambda q: q.query_time_ms):
        delay = query.query_time_ms * args.time_scale / 1000 - (time.monotonic() - started)
        if delay > 0:
            time.sleep(delay)
        indices.append(driver.submit_query(query.question, query.gold_answer))
    answers = [driver.wait_for_answer(index) for index in indices]
    transcript = driver.stop()
    return transcript, tuple(a for a in answers if a is not None)


def cmd_run(args: argparse.Namespace) -> int:
    config = _cli_config(args)
    backend = make_backend(config.backend)
    frames = read_frame_trace(args.frames)
    queries = read_query_trace(args.queries)
    if config.session.mode is SessionMode.REAL_TIME:
        transcript, answers = _run_real_time(config, backend, frames, queries, args)
    else:
        result = run_session(config.session, frames, queries, backend, session_id=args.session_id)
        transcript, answers = result.transcript, result.answers
    write_jsonl(transcript.to_records(), args.output)
    if args.answers:
        write_jsonl([answer.to_record() for answer in answers], args.answers)
    scores = [s for s in score_answers(answers, queries) if s is not None]
    if scores:
        sys.stderr.write(f"accuracy: {sum(scores) / len(scores):.3f} over {len(scores)} scored answers\n")
    return 0


def _parse_chat_line(line: str) -> tuple[Optional[float], str]:
    """Split an optional leading ``@<seconds>`` from the question."""
    if not line.startswith("@"):
        return None, line
    head, _, question = line[1:].partition(" ")
    try:
        return float(head), question.strip()
    except ValueError as e:
        raise ParameterError(f"Invalid input: bad stream time {head!r}") from e


def _answer_record(
    answer: AnswerRecord, question: str, transcript: SessionTranscript
) -> Dict:
    record = {
        "query_time_s": answer.query_time_ms / 1000,
        "question": question,
        "answer": answer.text,
        "boxed": answer.boxed_answer,
    }
    try:
        record["qa_latency_s"] = measure_latency(transcript, answer.query_index).qa_latency
    except StreamthinkError:
        record["qa_latency_s"] = (answer.end_ms - answer.query_time_ms) / 1000
    return record


def cmd_chat(
    args: argparse.Namespace, stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None
) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    config = _cli_config(args)
    backend = make_backend(config.backend)
    frames = read_frame_trace(args.frames) if args.frames else []
    if config.session.mode is SessionMode.REAL_TIME:
        return _chat_real_time(config, backend, frames, args, stdin, stdout)

    driver = SessionDriver(
        config.session, backend, frames, session_id=args.session_id, abort_on_failure=False
    )
    clock_s = 0.0
    for raw in stdin:
        line = raw.strip()
        if not line:
            continue
        try:
            at_s, question = _parse_chat_line(line)
        except ParameterError as e:
            sys.stderr.write(f"error: {e}\n")
            continue
        clock_s = at_s if at_s is not None else clock_s + args.advance
        at_ms = max(seconds_to_ms(clock_s), driver.state.clock_ms)
        try:
            index = driver.submit_query(QueryEvent(at_ms, question))
            answer = driver.run_until_answered(index)
        except StreamthinkError as e:
            sys.stderr.write(f"error: {e}\n")
            continue
        if answer is None:
            sys.stderr.write(f"error: no answer for question {index}\n")
            continue
        clock_s = max(clock_s, driver.state.clock_ms / 1000)
        _emit(_answer_record(answer, question, driver.transcript), stdout)
    return 0


def _chat_real_time(config, backend, frames, args, stdin: TextIO, stdout: TextIO) -> int:
    driver = RealTimeSessionDriver(
        config.session, backend, frames, session_id=args.session_id, time_scale=args.time_scale
    )
    driver.start()
    try:
        for raw in stdin:
            question = raw.strip()
            if not question:
                continue
            index = driver.submit_query(question)
            answer = driver.wait_for_answer(index, timeout=args.timeout)
            if answer is None:
                sys.stderr.write(f"error: no answer for question {index}\n")
                continue
            transcript = SessionTranscript(driver.state.transcript)
            _emit(_answer_record(answer, question, transcript), stdout)
    finally:
        driver.stop()
    return 0


def cmd_simulate_latency(args: argparse.Namespace) -> int:
    profile = read_profile(args.profile) if args.profile else calibrated_profile()
    sys.stdout.write(format_comparison(compare_paradigms(profile)))
    if args.clip_counts:
        try:
            counts = [int(c) for c in args.clip_counts.split(",") if c.strip()]
        except ValueError as e:
            raise ParameterError(f"Invalid input: bad --clip-counts {args.clip_counts!r}") from e
        sys.stdout.write("clip_count\tqa_latency_s\tdeadline_misses\n")
        for count, report in sweep_clip_counts(profile, counts).items():
            sys.stdout.write(f"{count}\t{report.qa_latency:.2f}\t{report.deadline_misses}\n")
    return 0


def cmd_mask(args: argparse.Namespace) -> int:
    seq = TokenTypeSequence.from_string(args.types)
    sys.stdout.write(format_mask(build_streaming_mask(seq, args.window)))
    return 0


def cmd_pack(args: argparse.Namespace) -> int:
    estimator = WordCountEstimator(args.tokens_per_word)
    records: List[Dict] = []
    for _, episode in read_jsonl(args.episode):
        records.extend(pack_episode(episode, args.max_tokens, estimator))
    write_jsonl(records, args.output)
    return 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    config = _cli_config(args)
    backend = make_backend(config.backend)
    if args.scenes:
        scenes = read_scene_clips(args.scenes)
    else:
        scenes = generate_synthetic_scenes(args.synthetic, seed=args.seed)
    extractions = read_extraction_trace(args.extractions) if args.extractions else None
    kg_config = KgSynthesisConfig(window_size=args.window, chain_count=args.chains, seed=args.seed)
    summary = synthesize_dataset(scenes, backend, args.out, kg_config, extractions)
    _emit(summary.to_record(), sys.stdout)
    return 0


def _fixed(value: float) -> str:
    return f"{round(value, 6) + 0.0:.6f}"


def cmd_rl_check(args: argparse.Namespace) -> int:
    group = read_rollout_group(args.rollouts, args.eps_low, args.eps_high, args.beta)
    advantages = group_advantages([t.reward for t in group.trajectories])
    for index, advantage in enumerate(advantages):
        sys.stdout.write(f"{index}\t{_fixed(advantage)}\n")
    sys.stdout.write(f"objective\t{_fixed(objective(group))}\n")
    return 0


def _get_command(name: str) -> Callable[[argparse.Namespace], int]:
    commands: Dict[str, Callable[[argparse.Namespace], int]] = {
        "run": cmd_run,
        "chat": cmd_chat,
        "simulate-latency": cmd_simulate_latency,
        "mask": cmd_mask,
        "pack": cmd_pack,
        "synthesize": cmd_synthesize,
        "rl-check": cmd_rl_check,
    }
    return commands[name]


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point for the CLI.

    Args:
        argv: Optional sequence of command-line arguments

    Returns:
        int: Exit code (0 for success, 1 for usage or validation errors,
        2 for runtime or backend errors)
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return 1
    if args.command is None:
        sys.stderr.write(parser.format_usage())
        return 1

    configure_logging(level=args.log_level, log_dir=args.log_dir)
    try:
        return _get_command(args.command)(args)
    except (ValidationError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return 1
    except (RuntimeFailure, LatencyDivisionError) as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(f"error: {e}\n")
        return 2
