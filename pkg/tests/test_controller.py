import random

import pytest

from raid import controller, formats
from raid.core import FiveTuple
from raid.dataplane import Dataplane, Digest, DigestKind, DigestQueue, PipelineConfig, run_trace
from raid.encoder import encode_model

from conftest import B, M, rrc, stump_model

T = FiveTuple.make("10.0.1.1", "10.0.0.1", 1, 38472, 132)


def classified(t, label, ts=0):
    return Digest(DigestKind.Classified, t, 0, label, 6, 500, 0, ts)


def test_on_digest_rule_and_collision():
    ctl = controller.Controller(Dataplane(PipelineConfig()))
    rule = ctl.on_digest(classified(T, M, 42))
    assert rule.label is M and rule.installed_at_us == 42
    assert ctl.log.rules[T] is rule
    ctl.on_digest(Digest(DigestKind.Collision, T._replace(src_port=2), 1, None, 0, 0))
    assert len(ctl.log.collisions) == 1 and len(ctl.log.rules) == 1


def test_duplicate_classification_is_anomaly():
    ctl = controller.Controller(Dataplane(PipelineConfig()))
    ctl.on_digest(classified(T, M))
    assert ctl.on_digest(classified(T, B)) is None
    assert ctl.log.rules[T].label is M and len(ctl.log.anomalies) == 1


def _recorded(n=10_000, seed=4):
    rnd = random.Random(seed)
    out = []
    for i in range(n):
        t = FiveTuple(0x0A000101, 0x0A000001, rnd.randrange(1, 3000), 38472, 132)
        if rnd.random() < 0.1:
            out.append(Digest(DigestKind.Collision, t, i, None, 0, 0, 0, i))
        else:
            out.append(classified(t, rnd.choice([B, M]), i))
    return out


def test_replay_equals_fold():
    digests = _recorded()
    text = formats.dump_digests(digests)
    replayed = formats.load_digests(text)
    q = DigestQueue(len(replayed))
    ctl = controller.Controller(Dataplane(PipelineConfig()), q)
    ctl.start_consumer()
    for d in replayed:
        q.publish(d)
    log = ctl.stop()

    ref = controller.ControllerLog()
    seen = set()
    for d in digests:
        if d.kind is DigestKind.Collision:
            ref.collisions.append(d)
        elif d.tuple in seen:
            ref.anomalies.append(d)
        else:
            seen.add(d.tuple)
            ref.classified.append(controller.FlowRule(d.tuple, d.label, d.ts_us))
    assert log.classified == ref.classified
    assert log.collisions == ref.collisions
    assert log.anomalies == ref.anomalies
    assert controller.fold_digests(replayed).classified == ref.classified
    assert {r.tuple for r in log.classified} == {d.tuple for d in digests if d.kind is DigestKind.Classified}


def test_start_with_valid_file(tmp_path):
    path = tmp_path / "entries.txt"
    path.write_text(formats.dump_entries(encode_model(stump_model())))
    dp = Dataplane(PipelineConfig(), DigestQueue())
    ctl = controller.start(dp, path)
    assert not dp.pass_through
    trace = [rrc(1000 + 150 * i, T) for i in range(6)]
    run_trace(dp.config, trace, dataplane=dp)
    log = ctl.stop()
    assert [r.label for r in log.classified] == [M]
    assert log.model_loads[0].num_trees == 1


def test_corrupted_file_refused(tmp_path):
    text = formats.dump_entries(encode_model(stump_model()))
    bad = text.replace("feature 4: 201 ", "feature 4: 205 ")
    assert bad != text
    path = tmp_path / "entries.txt"
    path.write_text(bad)
    dp = Dataplane(PipelineConfig(), DigestQueue())
    with pytest.raises(controller.ControllerStartError):
        controller.start(dp, path)
    assert dp.pass_through
    with pytest.raises(controller.ControllerStartError):
        controller.start(dp, tmp_path / "missing.txt")


def test_restart_same_file_same_tables(tmp_path):
    path = tmp_path / "entries.txt"
    path.write_text(formats.dump_entries(encode_model(stump_model())))
    a = Dataplane(PipelineConfig(), DigestQueue())
    b = Dataplane(PipelineConfig(), DigestQueue())
    controller.start(a, path, consume=False)
    controller.start(b, path, consume=False)
    assert a.model == b.model


def test_consumer_disabled_changes_no_verdict(low_run):
    enc = low_run.encoded
    on = Dataplane(PipelineConfig(enc), DigestQueue())
    ctl = controller.Controller(on)
    ctl.start_consumer()
    res_on = run_trace(on.config, low_run.trace, dataplane=on)
    ctl.stop()
    off = Dataplane(PipelineConfig(enc), DigestQueue(capacity=10))
    res_off = run_trace(off.config, low_run.trace, dataplane=off)
    assert res_on.verdicts == res_off.verdicts
    assert res_off.stats.digests_dropped == len(res_off.digests) - 10 > 0
    assert res_on.stats.digests_dropped == 0
