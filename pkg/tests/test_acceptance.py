"""The twelve acceptance criteria, one test each.

Every test reports a single PASS/FAIL line, collected in the terminal
summary under "acceptance criteria".
"""

import itertools
import math
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from lingopt.backend import HttpBackend, LogprobsRequest, ToyBackend
from lingopt.cmaa import CmaaConfig, cmaa_fuse
from lingopt.evalharness import (
    DatasetRecord,
    EvalConfig,
    Turn,
    build_instruction,
    eval_generation,
    eval_ranking,
    loop_modes,
    recompute,
    run_ablation_grid,
    standard_modes,
)
from lingopt.pipeline import PipelineConfig, build_comparison_prompt, optimize
from lingopt.scoring import IAS_PREFIX, Instruction, compute_ias, score_pair
from lingopt.toydata import toy_params, toy_records, training_examples
from lingopt.toymodel import (
    ImageGrid,
    TrainExample,
    Vocabulary,
    checkpoint,
    generate,
    grad_check,
    init_params,
)
from lingopt.toymodel.vocab import SPECIALS
from oracles import chain_rule_nlls
from wirelog import IMAGE, SCRIPT, golden_mismatch, wire_log


def test_ac01_cmaa_row_stochastic(acceptance):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_sum = worst_hull = 0.0
    for _ in range(100):
        n_text, n_vis, d = rng.integers(1, 65), rng.integers(1, 65), rng.integers(1, 129)
        text = rng.normal(scale=3.0, size=(n_text, d))
        vis = rng.normal(scale=3.0, size=(n_vis, d))
        fused = cmaa_fuse(text, vis, CmaaConfig(int(d), int(d)))
        worst_sum = max(worst_sum, float(np.max(np.abs(fused.attention.sum(axis=1) - 1.0))))
        lo, hi = text.min(axis=0), text.max(axis=0)
        excess = np.maximum(lo - fused.u_mm, 0) + np.maximum(fused.u_mm - hi, 0)
        worst_hull = max(worst_hull, float(excess.max()))
    seconds = time.perf_counter() - start
    ok = worst_sum <= 1e-9 and worst_hull <= 1e-9 and seconds < 5
    acceptance(1, "CMAA row-stochasticity", ok, f"row-sum err {worst_sum:.1e}, hull err {worst_hull:.1e}, {seconds:.2f}s")


def test_ac02_cmaa_hand_case(acceptance):
    fused = cmaa_fuse([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0]], CmaaConfig(2, 2))
    got = fused.attention[0]
    ok = bool(np.all(np.abs(got - [0.7311, 0.2689]) <= 1e-4))
    acceptance(2, "CMAA hand case", ok, f"attention {got.round(4).tolist()}")


def test_ac03_gradient_check(acceptance):
    start = time.perf_counter()
    probe = training_examples(toy_records()[:3])
    small = toy_params(seed=7, d_model=8, d_ff=16)
    n = small.n_scalars(trainable_only=True)
    full_err = grad_check(small, probe)
    vocab = Vocabulary(list(SPECIALS) + ["red", "blue", "cat"])
    img = ImageGrid.from_array(np.linspace(0.0, 1.0, 64).reshape(8, 8))
    linear_probe = [TrainExample(img, "red cat", "blue"), TrainExample(img, "blue", "cat red"), TrainExample(None, "cat", "red")]
    linear_err = grad_check(init_params(vocab, seed=7, d_model=8, n_blocks=0), linear_probe)
    seconds = time.perf_counter() - start
    ok = n <= 5000 and full_err < 1e-4 and linear_err < 1e-7 and seconds < 60
    acceptance(3, "gradient check", ok, f"{n} scalars, rel err {full_err:.1e}, linear-only {linear_err:.1e}, {seconds:.1f}s")


def test_ac04_training_convergence(acceptance, convergence_run):
    initial, sched, result, seconds = convergence_run
    frozen = [n for n, f in initial.trainable.items() if not f]
    untouched = all(result.params.tensors[n].tobytes() == initial.tensors[n].tobytes() for n in frozen)
    endpoints = (
        sched.lr_at(0) == sched.floor_lr
        and sched.lr_at(sched.warmup_steps) == sched.peak_lr
        and sched.lr_at(sched.total_steps) == sched.floor_lr
    )
    ok = (
        len(result.trace) == 2000 and sched.seed == 7 and sched.warmup_steps == 100
        and result.final_loss < 0.1 and bool(frozen) and untouched and endpoints and seconds < 120
    )
    detail = f"final NLL {result.final_loss:.2e}, frozen {frozen} unchanged={untouched}, endpoints={endpoints}, {seconds:.1f}s"
    acceptance(4, "training convergence", ok, detail)


def test_ac05_ias_uniform(acceptance, uniform_backend, ramp_image):
    errs = [abs(compute_ias(uniform_backend, ramp_image, " ".join(["w"] * n)) - math.log(4)) for n in (1, 3, 7)]
    acceptance(5, "IAS analytic uniform case", max(errs) <= 1e-9, f"max |IAS - ln 4| = {max(errs):.1e}")


def test_ac06_ias_oracle(acceptance, ramp_image):
    start = time.perf_counter()
    words = ["red", "blue", "cat"]
    vocab = Vocabulary(list(SPECIALS) + words)
    params = init_params(vocab, seed=13, d_model=8, d_ff=16)
    backend = ToyBackend(params)
    prompt_ids = vocab.encode(IAS_PREFIX)
    worst, count = 0.0, 0
    for n in (1, 2, 3):
        for combo in itertools.product(words, repeat=n):
            nlls = chain_rule_nlls(params, ramp_image.patches(), prompt_ids, [vocab.id_of(w) for w in combo])
            worst = max(worst, abs(compute_ias(backend, ramp_image, " ".join(combo)) - sum(nlls) / n))
            count += 1
    seconds = time.perf_counter() - start
    ok = count == 39 and worst <= 1e-9 and seconds < 10
    acceptance(6, "IAS chain-rule oracle", ok, f"{count} continuations, max err {worst:.1e}, {seconds:.2f}s")


def _random_prompts():
    rng = random.Random(77)
    out = []
    for _ in range(1000):
        a = round(rng.uniform(0.0, 6.0), rng.choice([1, 3, 6]))
        b = a if rng.random() < 0.15 else round(rng.uniform(0.0, 6.0), rng.choice([1, 3, 6]))
        pair = [Instruction("first one", "initial", a), Instruction("second one", "rewritten", b)]
        out.append((a, b, build_comparison_prompt(pair)))
    return out


def test_ac07_ranking_determinism(acceptance):
    first, second = _random_prompts(), _random_prompts()
    descending = ties_ok = True
    n_ties = 0
    for a, b, prompt in first:
        scores = [float(l[7:]) for l in prompt.splitlines() if l.startswith("Score: ")]
        descending &= scores == sorted(scores, reverse=True)
        worse_first = prompt.index("first one") < prompt.index("second one")
        if a == b:
            n_ties += 1
            ties_ok &= worse_first
        else:
            descending &= worse_first == (a > b)
    identical = [p for *_, p in first] == [p for *_, p in second]
    ok = descending and ties_ok and identical and n_ties > 0
    acceptance(7, "ranking determinism", ok, f"1000 pairs, {n_ties} ties, byte-identical={identical}")


def test_ac08_call_arithmetic(acceptance, stub_server):
    details, ok = [], True
    for cfg, name, expect in (
        (PipelineConfig(), "wire_standard_1r.txt", (1, 2, 1)),
        (PipelineConfig(rounds_mode="loop_xr", rounds=3), "wire_loop_3r.txt", (1, 4, 3)),
    ):
        server = stub_server(SCRIPT)
        with HttpBackend(server.url) as backend:
            _, trace = optimize(backend, IMAGE, "Caption the image.", cfg)
        plain = sum(1 for c in trace.calls if c.op == "generate" and c.image is None)
        scored = sum(1 for c in trace.calls if c.op == "logprobs")
        with_image = sum(1 for c in trace.calls if c.op == "generate" and c.image is not None)
        order_ok = trace.calls[0].op == "generate" and trace.calls[0].image is None
        problem = golden_mismatch(wire_log(server), name)
        ok &= (plain, scored, with_image) == expect and order_ok and problem is None
        details.append(f"{cfg.rounds_mode.value}: {plain}+{scored}+{with_image}" + ("" if problem is None else f" ({problem})"))
    acceptance(8, "pipeline call arithmetic", ok, ", ".join(details) + ", wire bodies match golden")


def test_ac09_concurrency(acceptance, toy_backend, ramp_image, stub_server):
    a, b = Instruction("what is in the image ?"), Instruction("name the main object .", "rewritten")
    ref = score_pair(toy_backend, ramp_image, a, b, concurrent=False)
    same = all(
        (p.initial.ias, p.rewritten.ias) == (ref.initial.ias, ref.rewritten.ias)
        for p in (score_pair(toy_backend, ramp_image, a, b, concurrent=True) for _ in range(50))
    )
    rules = [{"continuation": f"tok{i} end", "logprobs": [-(i + 1) / 32, -(i + 2) / 32]} for i in range(16)]
    server = stub_server({"logprobs": rules, "delay_ms": 25})
    barrier = threading.Barrier(16)
    with HttpBackend(server.url) as be:

        def call(i):
            barrier.wait()
            return be.logprobs(LogprobsRequest(None, f"p{i}", f"tok{i} end"))

        with ThreadPoolExecutor(16) as pool:
            replies = list(pool.map(call, range(16)))
    correct = all(
        r.tokens == [f"tok{i}", "end"] and r.logprobs == [-(i + 1) / 32, -(i + 2) / 32] for i, r in enumerate(replies)
    )
    acceptance(9, "concurrency equivalence", same and correct, f"50 trials identical={same}, 16 callers correct={correct}")


def test_ac10_eval_harness(acceptance, toy_backend, records):
    gen = eval_generation(toy_backend, records, EvalConfig())
    rank = eval_ranking(toy_backend, records, EvalConfig(mode="ranking"))
    recomputable = all(recompute(r.rows, m) == v for r in (gen, rank) for m, v in r.metrics.items())
    multi = DatasetRecord("m", None, (Turn("q one", "a one"), Turn("q two", "a two"), Turn("q three", "gold")))
    prompt = build_instruction(multi, EvalConfig())
    turns_ok = (
        multi.multi_turn and multi.gold == "gold"
        and "q one a one" in prompt and "q two a two" in prompt and "q three" in prompt and "gold" not in prompt
    )
    multi_in_corpus = sum(r.multi_turn for r in records)
    ok = (
        len(records) == 16 and gen.value == 1.0 and rank.metrics == {"accuracy": 1.0, "mrr": 1.0}
        and recomputable and turns_ok and multi_in_corpus > 0
    )
    detail = f"generation acc {gen.value}, ranking acc {rank.metrics['accuracy']} MRR {rank.metrics['mrr']}, recomputable={recomputable}, multi-turn ok={turns_ok}"
    acceptance(10, "eval harness", ok, detail)


def test_ac11_ablation_grid(acceptance, toy_backend, records, tmp_path):
    grid = run_ablation_grid(toy_backend, records, standard_modes() + loop_modes(4))
    written = {p.name for p in grid.write(tmp_path)}
    reports = {f"report_{m}.jsonl" for m in ("aio-off", "rewrite-only", "full")}
    traces = {f"ias_trace_loop-{r}r.jsonl" for r in range(1, 5)}
    shapes = all(len(t["round_ias"]) == r for r in range(1, 5) for t in grid.ias_traces[f"loop-{r}r"])
    trend = {f"loop-{r}r": [round(v, 4) if v is not None else None for v in grid.mean_round_ias(f"loop-{r}r")] for r in (1, 4)}
    ok = grid.complete and reports <= written and traces <= written and shapes
    acceptance(11, "ablation grid", ok, f"complete={grid.complete}, files={len(written)}, mean round IAS {trend}")


def test_ac12_checkpoint_roundtrip(acceptance, trained, records, tmp_path):
    path = tmp_path / "toy.ckpt"
    checkpoint.save(trained, path)
    loaded = checkpoint.load(path)
    params_ok = loaded.trainable == trained.trainable and all(
        loaded.tensors[n].tobytes() == t.tobytes() for n, t in trained.tensors.items()
    )
    gens_ok = True
    for ex in training_examples(records):
        prompt = trained.vocab.encode(ex.prompt)
        gens_ok &= generate(ex.image, prompt, 8, trained) == generate(ex.image, prompt, 8, loaded)
        rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(3)
        gens_ok &= generate(ex.image, prompt, 8, trained, 1.0, rng_a) == generate(ex.image, prompt, 8, loaded, 1.0, rng_b)
    acceptance(12, "checkpoint round-trip", params_ok and gens_ok, f"parameters identical={params_ok}, generations identical={gens_ok}")
