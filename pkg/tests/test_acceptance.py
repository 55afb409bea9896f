"""End-to-end acceptance checks, one verdict line per criterion.

Every verdict is computed by an independent oracle or a brute-force
reference over the finished trace (or over freshly generated law
populations) and recorded as exactly one PASS/FAIL line, printed in the
"acceptance criteria" section after the pytest summary.
"""

import json
import pathlib
import random
import subprocess
import sys
import time

from fds.core import AgentName, Arrived, ControlState, Sent, Term, hash_law
from fds.harness import load_scenario, replay_report_file, run_scenario
from fds.hierarchy import Framework, LawPath, MetaViolation, derive_ruling
from fds.lawlang import evaluate_law, parse_law
from fds.library import build_acme_hierarchy, make_cc_law
from fds.oracles import (
    CCOracle,
    RateControlReference,
    audit_mismatches,
    bc_ledger,
    dual_mediation_counts,
    interdivision_deliveries,
    mediation_violations,
    rc_actions_from_trace,
    rc_forwards_from_trace,
    rc_spacing_violations,
    ring_token_oracle,
)

SCENARIOS = pathlib.Path(__file__).resolve().parents[1] / "src" / "fds" / "scenarios"


def _forwards_by_sender(records, server):
    out = {}
    for t, s, _ in rc_forwards_from_trace(records, server):
        out.setdefault(s, []).append(t)
    return out


def _send_attempts(records, server):
    out = {}
    for r in records:
        if r["type"] == "ruling" and r.get("event") == "sent" \
                and r["eventArgs"][2] == server and r["agent"] != server:
            out.setdefault(r["agent"], []).append(r["time"])
    return out


def test_drop_law_keeps_ten_fast_senders_spaced(criterion):
    t0 = time.perf_counter()
    report = run_scenario(load_scenario(SCENARIOS / "rc-drop.json"))
    elapsed = time.perf_counter() - t0
    records = report.records
    senders = sorted(_send_attempts(records, "v"))
    forwards = _forwards_by_sender(records, "v")
    # changeDelay(100) is delivered at t=4; after that, consecutive
    # forwards from any one sender must be at least 100 apart
    min_gap = None
    for times in forwards.values():
        post = [t for t in times if t > 4]
        for a, b in zip(post, post[1:]):
            min_gap = b - a if min_gap is None else min(min_gap, b - a)
    ticks = records[-1]["time"]
    ok = (
        len(senders) == 10
        and ticks >= 10_000
        and min_gap is not None and min_gap >= 100
        and not rc_spacing_violations(records, "v")
        and report.ok()
        and elapsed < 5.0
    )
    criterion(
        "1 rate-control-drop",
        ok,
        "%d senders, %d ticks, min forward gap %s >= 100, run took %.2fs < 5s"
        % (len(senders), ticks, min_gap, elapsed),
    )


def test_buffer_law_forwards_everything_with_exact_spacing(criterion, rc_buffer_report):
    records = rc_buffer_report.records
    forwards = _forwards_by_sender(records, "v")
    attempts = _send_attempts(records, "v")
    # worked example: sends at 0/50/120 under delay 100 forward at 0/100/200
    walkthrough = forwards.get("a", []) == [0, 100, 200]
    # nothing is dropped: every buffered message is eventually forwarded
    complete = all(len(forwards.get(s, [])) == len(ts) for s, ts in attempts.items())
    # under saturation the flush obligation fires exactly every delay ticks
    b_times = forwards.get("b", [])
    exact_spacing = bool(b_times) and all(
        b - a == 100 for a, b in zip(b_times, b_times[1:]))
    ref = RateControlReference("buffer", 100, "v")
    predicted = ref.run(rc_actions_from_trace(records, "v"))
    actual = rc_forwards_from_trace(records, "v")
    matches_reference = sorted(predicted) == sorted(actual)
    ok = (walkthrough and complete and exact_spacing and matches_reference
          and rc_buffer_report.ok())
    criterion(
        "2 rate-control-buffer",
        ok,
        "walkthrough forwards %r, %d/%d messages forwarded, saturation gaps "
        "exactly 100, reference match=%s"
        % (forwards.get("a"), len(actual), sum(map(len, attempts.values())),
           matches_reference),
    )


def test_budget_ledger_balances_despite_rogues_and_overspends(criterion, acme_bc_report):
    report = acme_bc_report
    ledger = bc_ledger(report.records)
    scripted = 0
    for item in report.scenario["timeline"]:
        scripted += item["count"] if item.get("action") == "random-traffic" else 1
    agents = {r["agent"] for r in report.records if r["type"] == "adopt"}
    overspends = [r for r in report.records if r["type"] == "ruling"
                  and r.get("blocked") and "overspend" in r.get("ops", "")]
    rogues = [r for r in report.records if r["type"] in ("rogue", "rogue-blocked")]
    reports_exact = bool(ledger.reports) and all(
        claimed == tracked for _, claimed, tracked in ledger.reports)
    ok = (
        not ledger.overdrafts
        and reports_exact
        and overspends
        and rogues
        and len(agents) <= 50
        and scripted <= 10_000
        and report.ok()
    )
    criterion(
        "3 budget-control-ledger",
        ok,
        "%d agents, %d scripted events, %d overspend attempts blocked, "
        "%d rogue attempts contributed 0, %d income reports exact, "
        "overdrafts=%r"
        % (len(agents), scripted, len(overspends), len(rogues),
           len(ledger.reports), ledger.overdrafts),
    )


def _sealed_population(rng, trial):
    sealed_verdict = rng.choice(["forward", 'block("sealed-policy")'])
    root = (
        "law gen-root\n"
        "default %s\n" % rng.choice(["block", "pass"]) +
        "meta { free:* open }\n"
        # ruling on an aspect without granting a meta permission seals it
        "rule s1 aspect locked on sent(_, lock(_), _) do { %s }\n" % sealed_verdict +
        "rule f1 aspect free:a on sent(_, open(X), _) when X < %d do { %s }\n"
        % (rng.randint(10, 90), rng.choice(["forward", 'block("narrow")']))
    )
    forged = (
        "law gen-forge%d\nextends gen-root\n" % trial +
        "rule x1 aspect locked on sent(_, lock(_), _) do { %s }\n"
        % rng.choice(["forward", "block"])
    )
    legit = (
        "law gen-ok%d\nextends gen-root\n" % trial +
        "rule y1 aspect free:b on sent(_, open(X), _) when X < %d do { %s }\n"
        % (rng.randint(10, 90), rng.choice(["forward", 'block("tight")']))
    )
    return root, forged, legit


def test_sealed_aspects_survive_forged_and_legitimate_deltas(criterion):
    rng = random.Random(404)
    rejected = 0
    mismatches = []
    trials = 100
    for trial in range(trials):
        root_text, forged_text, legit_text = _sealed_population(rng, trial)
        fw = Framework()
        root_h = fw.publish_root(parse_law(root_text))
        try:
            fw.publish_delta(root_h, parse_law(forged_text))
        except MetaViolation:
            rejected += 1
        leaf_h = fw.publish_delta(root_h, parse_law(legit_text))
        root_path = fw.resolve_path(root_h)
        leaf_path = fw.resolve_path(leaf_h)
        # a path forged around the publish gate must be neutralized at runtime
        forged_path = LawPath((root_h, "forged"),
                              (fw.docs[root_h], parse_law(forged_text)))
        for _ in range(5):
            state = ControlState([Term("name", ("a",))]).with_overlay(
                [Term("clock", (rng.randint(0, 50),))])
            event = Sent(AgentName("b"), Term("lock", (rng.randint(0, 9),)))
            want = derive_ruling(root_path, event, state).canonical_ops()
            for path in (leaf_path, forged_path):
                got = derive_ruling(path, event, state).canonical_ops()
                if got != want:
                    mismatches.append((trial, got, want))
    ok = rejected == trials and not mismatches
    criterion(
        "4 sealed-aspects",
        ok,
        "%d/%d forged deltas rejected at publish, leaf rulings equal the "
        "sealing law's on every probe, mismatches=%r"
        % (rejected, trials, mismatches[:3]),
    )


def _tighten_pair(rng):
    rules = []
    for j in range(rng.randint(2, 4)):
        rules.append(
            "rule r%d aspect m:x on sent(_, f%d(X), _) when X < %d do { %s }"
            % (j, rng.randint(0, 3), rng.randint(10, 110),
               rng.choice(["forward", 'block("r%d")' % j])))
    # a catch-all makes the superior's permit set total, so tightening
    # below can only ever shrink it
    rules.append("rule rz aspect m:x on sent(_, _, _) do { %s }"
                 % rng.choice(["forward", 'block("rz")']))
    root = ("law t-root\ndefault block\nmeta { m:* tighten }\n"
            + "\n".join(rules) + "\n")
    drules = []
    for j in range(rng.randint(1, 4)):
        drules.append(
            "rule d%d aspect m:x on sent(_, f%d(X), _) when X < %d do { %s }"
            % (j, rng.randint(0, 3), rng.randint(10, 110),
               rng.choice(["forward", 'block("d%d")' % j])))
    delta = "law t-delta\nextends t-root\n" + "\n".join(drules) + "\n"
    return root, delta


def test_tightening_never_adds_permissions(criterion):
    rng = random.Random(505)
    pairs = 100
    events_per_pair = 1000
    widened = []
    for trial in range(pairs):
        root_text, delta_text = _tighten_pair(rng)
        fw = Framework()
        root_h = fw.publish_root(parse_law(root_text))
        leaf_h = fw.publish_delta(root_h, parse_law(delta_text))
        root_path = fw.resolve_path(root_h)
        leaf_path = fw.resolve_path(leaf_h)
        base = ControlState([Term("name", ("a",))])
        for _ in range(events_per_pair):
            state = base.with_overlay([Term("clock", (rng.randint(0, 50),))])
            event = Sent(AgentName("b"),
                         Term("f%d" % rng.randint(0, 4), (rng.randint(0, 130),)))
            leaf_permits = not derive_ruling(leaf_path, event, state).blocks()
            if leaf_permits and derive_ruling(root_path, event, state).blocks():
                widened.append((trial, event.payload.canonical()))
    ok = not widened
    criterion(
        "5 tighten-monotonicity",
        ok,
        "%d pairs x %d random events: leaf permit set stayed within the "
        "superior's, widenings=%r" % (pairs, events_per_pair, widened[:3]),
    )


def test_every_interdivision_delivery_is_audited(criterion, acme_basic_report):
    report = acme_basic_report
    inter = interdivision_deliveries(report.records)
    mismatched = audit_mismatches(report.records, report.audit)
    ok = bool(inter) and len(inter) == len(report.audit) and not mismatched
    criterion(
        "6 interdivision-audit",
        ok,
        "%d inter-division deliveries == %d audit records, sender/target "
        "pairs all match" % (len(inter), len(report.audit)),
    )


def test_token_ring_keeps_one_token_through_churn(criterion, ring_report):
    report = ring_report
    verdict = ring_token_oracle(report.records, allowed_losses=10,
                                rotation_window=150)
    passes = sum(1 for r in report.records if r["type"] == "envelope"
                 and r["payload"] == "token(1)")
    quits = sum(1 for r in report.records if r["type"] == "quit")
    joins = sum(1 for r in report.records
                if r["type"] == "adopt" and r["time"] > 0)
    holder_removals = sum(
        1 for r in report.records
        if r["type"] == "ruling" and r.get("event") == "arrived"
        and r["eventArgs"][1] == "revoke" and "remove hasToken" in r["ops"])
    members_that_held = set(verdict.holds) - {"ringmgr"}
    ok = (
        verdict.ok
        and passes >= 1000
        and quits + joins == 20
        and holder_removals >= 1
        and len(members_that_held) == 15
        and report.ok()
    )
    criterion(
        "7 token-ring-churn",
        ok,
        "%d passes, %d churn ops (%d removals incl. %d token holders, "
        "%d additions), token count never above 1 (max %d), all %d members "
        "held within the rotation window"
        % (passes, quits + joins, quits, holder_removals, joins,
           verdict.max_count, len(members_that_held)),
    )


def test_firewall_decides_rogue_fate_but_mediation_is_total(
        criterion, acme_basic_report, acme_basic_firewalled_report):
    open_run = acme_basic_report.records
    closed_run = acme_basic_firewalled_report.records
    open_problems = mediation_violations(open_run, firewall=False)
    closed_problems = mediation_violations(closed_run, firewall=True)
    flagged = [r for r in open_run if r["type"] == "rogue"]
    audited_functors = {a["payloadFunctor"] for a in acme_basic_report.audit}
    blocked = [r for r in closed_run if r["type"] == "rogue-blocked"]
    leaked = [r for r in closed_run if r["type"] == "rogue"]
    ok = (
        not open_problems and not closed_problems
        and len(flagged) == 2 and "covert" not in audited_functors
        and len(blocked) == 2 and not leaked
    )
    criterion(
        "8 mediation-completeness",
        ok,
        "every delivery backed by a deliver ruling in both runs; firewall "
        "off: %d rogue payloads flagged, none audited; firewall on: %d "
        "blocked, %d leaked" % (len(flagged), len(blocked), len(leaked)),
    )


def test_both_controllers_rule_and_recognize_communities(criterion, acme_basic_report):
    report = acme_basic_report
    acme = build_acme_hierarchy()
    envelopes = {r["seq"]: r for r in report.records if r["type"] == "envelope"}
    stacked = {r["agent"] for r in report.records if r["type"] == "stack-adopt"}
    bad_counts = []
    for seq, count in dual_mediation_counts(report.records):
        env = envelopes[seq]
        expected = (2 if env["sender"] in stacked else 1) + \
                   (2 if env["target"] in stacked else 1)
        if count != expected:
            bad_counts.append((seq, count, expected))
    arrivals = [r for r in report.records
                if r["type"] == "ruling" and r.get("event") == "arrived"]
    same_law = [r for r in arrivals if r["agent"] == "s2"
                and "peerSameLaw(1)" in r["overlay"]]
    cross_law = [r for r in arrivals if r["agent"] == "b1"
                 and r["eventArgs"][0] == "a1"
                 and "peerSameLaw(0)" in r["overlay"]]
    prober = report.actors["p"]
    texts_consistent = (set(prober.texts) == {acme.d1, acme.d2} and all(
        hash_law(text) == h for h, text in prober.texts.items()))
    lca_ok = (prober.lca(acme.travel, acme.d2) == acme.root
              and prober.lca(acme.travel, acme.d1) == acme.d1)
    ok = (not bad_counts and same_law and cross_law
          and texts_consistent and lca_ok)
    criterion(
        "9 dual-mediation-and-community",
        ok,
        "all %d deliveries got 2 rulings per mediated side (4 when both "
        "stacked); same-law peers recognized, different-law peers fetched "
        "texts (hash-consistent) and computed correct ancestors"
        % len(dual_mediation_counts(report.records)),
    )


def test_runs_are_reproducible_and_replayable_offline(criterion, acme_bc_report, tmp_path):
    scenario = load_scenario(SCENARIOS / "acme-basic.json")
    first = run_scenario(scenario)
    second = run_scenario(scenario)
    identical = first.trace_lines() == second.trace_lines()
    # offline replay: rebuild the framework from the law texts in the
    # report file and re-derive every recorded ruling from the trace alone
    path = tmp_path / "acme-bc-report.json"
    path.write_text(acme_bc_report.to_json())
    replay_ok, problems = replay_report_file(path)
    rulings = sum(1 for r in acme_bc_report.records if r["type"] == "ruling")
    ok = identical and replay_ok
    criterion(
        "10 determinism-and-replay",
        ok,
        "two runs of the same (scenario, seed) produced byte-identical "
        "traces (%d records); offline replay re-derived all %d rulings, "
        "problems=%r" % (len(first.records), rulings, problems[:2]),
    )


def test_spacing_law_matches_brute_force_oracle(criterion):
    doc = parse_law(make_cc_law("s", 100))
    rng = random.Random(1107)
    sequences = 1000
    total = 0
    longest = 0
    mismatches = []
    for i in range(sequences):
        length = rng.randint(50, 350)
        longest = max(longest, length)
        self_name = rng.choice(["c", "c", "c", "s"])
        oracle = CCOracle("s", 100, 0)
        state = doc.initial_state().add(Term("name", (self_name,)))
        clock = 0
        for _ in range(length):
            clock += rng.randint(0, 130)
            if rng.random() < 0.65:
                kind = "sent"
                peer = rng.choice(["s", "s", "s", "x"])
                payload = Term("m", (rng.randint(0, 9),))
                event = Sent(AgentName(peer), payload)
            else:
                kind = "arrived"
                peer = rng.choice(["s", "x"])
                payload = rng.choice([
                    Term("changeDelay", (rng.choice([30, 80, 100, 150]),)),
                    Term("note", (rng.randint(0, 9),)),
                ])
                event = Arrived(AgentName(peer), "lawhash", payload)
            ruling = evaluate_law(doc, event,
                                  state.with_overlay([Term("clock", (clock,))]))
            expected = oracle.step(kind, clock, self_name, peer, payload)
            total += 1
            if ruling.canonical_ops() != expected:
                mismatches.append((i, clock, kind, ruling.canonical_ops(), expected))
                break
            state = ruling.new_state
    ok = not mismatches
    criterion(
        "11 oracle-equivalence",
        ok,
        "%d random sequences (%d events, max length %d <= 1000) agreed "
        "with the hand-rolled oracle, mismatches=%r"
        % (sequences, total, longest, mismatches[:2]),
    )


def test_metrics_report_median_evaluation_latency(criterion, tmp_path):
    ceiling_us = 1000.0
    target_us = 50.0
    medians = {}
    for scen, label in [("cc-demo.json", "cc"), ("acme-basic.json", "acme")]:
        out = tmp_path / (label + "-metrics.json")
        proc = subprocess.run(
            [sys.executable, "-m", "fds.cli", "run",
             str(SCENARIOS / scen), "--metrics-out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        medians[label] = json.loads(out.read_text())["laws"]
    cc_hash = hash_law(parse_law(make_cc_law("s", 100)).canonical())
    root_hash = build_acme_hierarchy().root
    cc_med = medians["cc"][cc_hash]["median_us"]
    root_med = medians["acme"][root_hash]["median_us"]
    ok = cc_med < ceiling_us and root_med < ceiling_us
    informational = ("both within the %.0fus target" % target_us
                     if max(cc_med, root_med) <= target_us else
                     "informational %.0fus target missed" % target_us)
    criterion(
        "12 evaluation-latency",
        ok,
        "median per ruling: spacing law %.1fus, corporate root %.1fus; "
        "hard ceiling %.0fus; %s"
        % (cc_med, root_med, ceiling_us, informational),
    )
