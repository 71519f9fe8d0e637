import json
import random

import pytest

from lingopt.backend import HttpBackend
from lingopt.backend.server import ScriptedBackend
from lingopt.errors import ConfigurationError, PipelineError, PreconditionError
from lingopt.pipeline import (
    PipelineConfig,
    RoundsMode,
    build_comparison_prompt,
    format_score,
    optimize,
    rank_descending,
    replay,
    rewrite,
    rewrite_prompt,
)
from lingopt.scoring import Instruction, InstructionKind, ScoredPair
from wirelog import IMAGE, REWRITE_B1, SCRIPT, golden_mismatch, wire_log


def scored(text, ias, kind="initial"):
    return Instruction(text, kind, ias)


def assert_matches_golden(lines, name):
    problem = golden_mismatch(lines, name)
    assert problem is None, problem


def test_rewrite_template_assembly():
    assert rewrite_prompt("Caption the image.") == REWRITE_B1
    assert rewrite_prompt("a {} b") == (
        "There is the text a {} b. Please modify the text to make it better "
        "while retaining the sentence structure and keywords."
    )
    assert rewrite_prompt("x", 2).endswith("keywords. Variant 2:")


def test_rewrite_echo_and_fallback():
    backend = ScriptedBackend(SCRIPT)
    out = rewrite(backend, Instruction("Caption the image."))
    assert out.text == "Describe this image in detail." and out.kind is InstructionKind.REWRITTEN
    from lingopt.pipeline import OptimizationTrace

    trace = OptimizationTrace(RoundsMode.STANDARD, 1, Instruction("Name it."))
    out = rewrite(ScriptedBackend({"default_text": "   "}), Instruction("Name it."), trace=trace)
    assert out.text == "Name it." and out.kind is InstructionKind.REWRITTEN
    assert trace.flags == ["rewrite_fallback:1"]


def test_comparison_prompt_ordering_and_format():
    pair = ScoredPair(scored("first", 2.0), scored("second", 1.0, "rewritten"))
    assert build_comparison_prompt(pair) == (
        "The following instructions are scored; lower score means better instruction.\n"
        "Instruction: first\nScore: 2.0000\nInstruction: second\nScore: 1.0000\n"
        "Write a new instruction that would get an even lower score:\nInstruction:"
    )
    flipped = ScoredPair(scored("first", 1.0), scored("second", 2.0, "rewritten"))
    assert build_comparison_prompt(flipped).index("second") < build_comparison_prompt(flipped).index("first")


def test_tie_puts_rewrite_in_better_slot():
    prompt = build_comparison_prompt(ScoredPair(scored("init", 1.5), scored("rew", 1.5, "rewritten")))
    assert prompt.index("Instruction: init") < prompt.index("Instruction: rew")


def test_score_formatting():
    assert format_score(1.386294) == "1.3863"
    assert format_score(0.125, 2) == "0.12"
    assert format_score(0.375, 2) == "0.38"
    assert format_score(2.0) == "2.0000"


def test_missing_ias_is_rejected():
    with pytest.raises(PreconditionError):
        build_comparison_prompt([scored("a", 1.0), Instruction("b")])
    with pytest.raises(PreconditionError):
        build_comparison_prompt([scored("a", 1.0)])


def test_random_pairs_descend_deterministically():
    rng = random.Random(1234)

    def prompts():
        rng.seed(1234)
        out = []
        for _ in range(1000):
            a = round(rng.uniform(0, 5), rng.choice([1, 2, 6]))
            b = a if rng.random() < 0.1 else round(rng.uniform(0, 5), rng.choice([1, 2, 6]))
            out.append((a, b, build_comparison_prompt(ScoredPair(scored("A", a), scored("B", b, "rewritten")))))
        return out

    first = prompts()
    for a, b, prompt in first:
        ranked = rank_descending([scored("A", a), scored("B", b, "rewritten")])
        assert ranked[0].ias >= ranked[1].ias
        if a == b:
            assert prompt.index("Instruction: A") < prompt.index("Instruction: B")
        scores = [float(line[7:]) for line in prompt.splitlines() if line.startswith("Score: ")]
        assert scores == sorted(scores, reverse=True)
    assert [p for *_, p in first] == [p for *_, p in prompts()]


def test_config_defaults_and_validation():
    cfg = PipelineConfig()
    assert cfg.rounds == 1 and cfg.rounds_mode is RoundsMode.STANDARD and not cfg.guard_fallback
    assert cfg.score_decimals == 4
    with pytest.raises(ConfigurationError):
        PipelineConfig(rounds_mode="standard_1r", rounds=2)
    with pytest.raises(ConfigurationError):
        PipelineConfig(rounds_mode="loop_xr", rounds=0)
    with pytest.raises(ValueError):
        PipelineConfig(rounds_mode="sideways")


def test_standard_call_arithmetic_and_wire(stub_server):
    server = stub_server(SCRIPT)
    with HttpBackend(server.url) as backend:
        final, trace = optimize(backend, IMAGE, "Caption the image.")
    assert final.text == "Describe the image." and final.kind is InstructionKind.OPTIMIZED
    ops = [(c.op, c.image is not None) for c in trace.calls]
    assert ops == [("generate", False), ("logprobs", True), ("logprobs", True), ("generate", True)]
    assert [c.seq for c in trace.calls] == [0, 1, 2, 3]
    assert_matches_golden(wire_log(server), "wire_standard_1r.txt")
    assert trace.ias_table() == {"initial": 2.0, "rewritten": 1.0, "optimized_1": None}


def test_loop_call_arithmetic_and_wire(stub_server):
    server = stub_server(SCRIPT)
    cfg = PipelineConfig(rounds_mode="loop_xr", rounds=3)
    with HttpBackend(server.url) as backend:
        final, trace = optimize(backend, IMAGE, "Caption the image.", cfg)
    kinds = [c.op for c in trace.calls]
    assert kinds.count("logprobs") == 4
    assert [(c.op, c.image is not None) for c in trace.calls if c.op == "generate"] == [
        ("generate", False), ("generate", True), ("generate", True), ("generate", True)
    ]
    assert [c.round for c in trace.calls] == [1, 1, 1, 1, 2, 2, 3, 3]
    assert final.text == "Describe every object."
    assert len(trace.prompts) == 3
    assert_matches_golden(wire_log(server), "wire_loop_3r.txt")


def test_rewriting_xr_uses_variants():
    backend = ScriptedBackend({"default_text": "x"})
    cfg = PipelineConfig(rounds_mode="rewriting_xr", rounds=3)
    _, trace = optimize(backend, None, "Caption the image.", cfg)
    gens = [c.prompt for c in trace.calls if c.op == "generate" and c.stage == "rewrite"]
    assert gens == [rewrite_prompt("Caption the image.", k) for k in (1, 2, 3)]
    assert len(trace.rewrites) == 3
    assert trace.prompts[0].count("Instruction:") == 5


def test_guard_picks_best_earlier_instruction():
    _, trace = optimize(ScriptedBackend(SCRIPT), IMAGE, "Caption the image.")
    script = dict(SCRIPT, generate=[SCRIPT["generate"][0], dict(SCRIPT["generate"][1], text="Describe every object.")])
    final, trace = optimize(ScriptedBackend(script), IMAGE, "Caption the image.", PipelineConfig(guard_fallback=True))
    assert final.text == "Describe this image in detail." and final.ias == 1.0
    assert "guard_selected_earlier" in trace.flags
    assert trace.optimized[0].ias == 3.0
    assert [c.stage for c in trace.calls][-1] == "guard"


def test_empty_optimized_output_falls_back_to_best():
    script = dict(SCRIPT, generate=[SCRIPT["generate"][0]])
    final, trace = optimize(ScriptedBackend(script), IMAGE, "Caption the image.")
    assert final.text == "Describe this image in detail."
    assert trace.flags == ["empty_optimized_fallback:1"]
    assert trace.final is final


@pytest.mark.parametrize("fail_op", ["generate", "logprobs"])
def test_backend_failure_keeps_user_intent(stub_server, fail_op):
    server = stub_server(dict(SCRIPT, fail={fail_op: 99}))
    with HttpBackend(server.url, sleep=lambda s: None) as backend:
        with pytest.raises(PipelineError) as info:
            optimize(backend, IMAGE, "Caption the image.")
    err = info.value
    assert err.fallback.text in {"Caption the image.", "Describe this image in detail."}
    assert err.trace.calls and err.trace.calls[-1].error.startswith("NetworkError")
    assert "pipeline_error" in err.trace.flags


def test_failure_mid_loop_returns_seen_instruction():
    class FailLate(ScriptedBackend):
        n = 0

        def generate(self, req):
            self.n += 1
            if self.n == 3:
                from lingopt.errors import NetworkError

                raise NetworkError("down")
            return super().generate(req)

    with pytest.raises(PipelineError) as info:
        optimize(FailLate(SCRIPT), IMAGE, "Caption the image.", PipelineConfig(rounds_mode="loop_xr", rounds=3))
    assert info.value.fallback.text == "Describe the image."


def test_replay_reproduces_outputs():
    cfg = PipelineConfig(rounds_mode="loop_xr", rounds=2)
    _, trace = optimize(ScriptedBackend(SCRIPT), IMAGE, "Caption the image.", cfg)
    assert replay(trace, ScriptedBackend(SCRIPT)) == [c.output for c in trace.calls]


def test_trace_serialization(tmp_path):
    final, trace = optimize(ScriptedBackend(SCRIPT), IMAGE, "Caption the image.")
    path = tmp_path / "trace.jsonl"
    trace.write(path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(lines) == len(trace.calls) + 1
    assert all({"op", "round", "latency_ms", "stage"} <= set(l) for l in lines[:-1])
    summary = lines[-1]["summary"]
    assert summary["initial"] == "Caption the image." and summary["optimized"] == final.text
    assert summary["ias"] == {"initial": 2.0, "rewritten": 1.0, "optimized_1": None}
    assert summary["mode"] == "standard_1r" and summary["rounds"] == 1
