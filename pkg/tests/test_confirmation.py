import json
from dataclasses import replace

import pytest

from xchainlab.chain import (
    ChainId,
    ChainView,
    CrossChainSegment,
    ZERO_HASH,
    encode_segment,
    hash_header,
    make_genesis,
    seal_block,
)
from xchainlab.confirmation import (
    ConfirmationError,
    ConfirmationState,
    ConflictReport,
    Infeasible,
    NotOnCanonicalBranch,
    SegmentConfig,
    SegmentRejected,
    apply_resolution,
    assemble_segment,
    confirmation_depth,
    detect_producer_conflict,
    is_confirmed,
    mine_confirmation,
    plan_segment_length,
    resolve_producer_conflict,
    segment_log_entries,
    write_confirmation_log,
)
from xchainlab.sync import HeaderImportStore, export_cross_txs, import_cross_txs, import_headers
from xchainlab.validator import IsolatedEnv, replay_invocations

from helpers import default_segment_cfg, producer_with_contracts, simple_chain


def brute_force_r2_min(p, delta, n_max=10_000):
    """Oracle: first n whose n-th power of p drops below delta."""
    for n in range(1, n_max):
        if p**n < delta:
            return n
    raise AssertionError("no feasible n")


class TestPlanner:
    def test_fixture_returns_four(self):
        cfg = SegmentConfig(
            p_fake_avg=0.3, delta=0.01, beta_ms=300_000, avg_block_time_ms=10_000,
            header_size=80, max_block_size=1 << 20,
        )
        plan = plan_segment_length(cfg)
        assert plan.n == 4
        assert plan.r2_met
        # all three inequalities hold as computed
        assert plan.n * cfg.header_size < cfg.max_block_size
        assert cfg.p_fake_avg ** plan.n < cfg.delta
        assert plan.n * cfg.avg_block_time_ms < cfg.beta_ms
        # evaluate powers numerically: 0.3^3 >= 0.01 > 0.3^4
        assert 0.3**3 >= 0.01
        assert 0.3**4 < 0.01
        assert plan.n == brute_force_r2_min(0.3, 0.01)

    def test_fit_rule_bound(self):
        cfg = SegmentConfig(
            p_fake_avg=0.3, delta=0.01, beta_ms=10**9, avg_block_time_ms=1,
            header_size=80, max_block_size=1 << 20,
        )
        plan = plan_segment_length(cfg)
        assert plan.r1_max_n == 13107
        assert 13107 * 80 < (1 << 20) <= 13108 * 80
        assert plan.n == 4  # small n unaffected by the fit bound

    def test_delay_rule_caps_with_warning(self):
        cfg = SegmentConfig(
            p_fake_avg=0.3, delta=0.01, beta_ms=30_000, avg_block_time_ms=10_000,
        )
        plan = plan_segment_length(cfg)
        assert plan.r3_max_n == 2
        assert plan.n == 2
        assert not plan.r2_met
        assert plan.r2_min_n == 4

    def test_beta_caps_at_one(self):
        cfg = SegmentConfig(
            p_fake_avg=0.3, delta=0.01, beta_ms=15_000, avg_block_time_ms=10_000,
        )
        plan = plan_segment_length(cfg)
        assert plan.n == 1 and not plan.r2_met

    def test_header_larger_than_block_infeasible(self):
        cfg = SegmentConfig(
            p_fake_avg=0.3, delta=0.01, beta_ms=100_000, avg_block_time_ms=10_000,
            header_size=2048, max_block_size=1024,
        )
        with pytest.raises(Infeasible) as exc:
            plan_segment_length(cfg)
        assert exc.value.rule == "R1"

    def test_block_time_beyond_beta_infeasible(self):
        cfg = SegmentConfig(
            p_fake_avg=0.3, delta=0.01, beta_ms=5_000, avg_block_time_ms=10_000,
        )
        with pytest.raises(Infeasible) as exc:
            plan_segment_length(cfg)
        assert exc.value.rule == "R3"

    @pytest.mark.parametrize(
        "p,delta",
        [(0.5, 0.1), (0.9, 0.001), (0.01, 0.5), (0.0, 0.5), (0.3, 0.3)],
    )
    def test_r2_minimum_matches_oracle(self, p, delta):
        cfg = SegmentConfig(
            p_fake_avg=p, delta=delta, beta_ms=10**9, avg_block_time_ms=1,
        )
        assert plan_segment_length(cfg).n == brute_force_r2_min(p, delta)

    def test_auto_plan_always_satisfies_r2_or_flags(self):
        for p in (0.1, 0.3, 0.5, 0.7, 0.95):
            for beta in (15_000, 50_000, 300_000):
                cfg = SegmentConfig(
                    p_fake_avg=p, delta=0.01, beta_ms=beta, avg_block_time_ms=10_000,
                )
                plan = plan_segment_length(cfg)
                if plan.r2_met:
                    assert p**plan.n < 0.01
                else:
                    assert p**plan.n >= 0.01

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfirmationError):
            SegmentConfig(p_fake_avg=1.0, delta=0.01, beta_ms=1, avg_block_time_ms=1)
        with pytest.raises(ConfirmationError):
            SegmentConfig(p_fake_avg=0.3, delta=0.0, beta_ms=1, avg_block_time_ms=1)


def synced(producer):
    store = HeaderImportStore()
    headers = [producer.view.blocks[h].header for h in producer.view.canonical_hashes()]
    import_headers(store, headers)
    bundles = []
    for block in producer.view.canonical_blocks():
        bundles.extend(export_cross_txs(block))
    import_cross_txs(store, bundles)
    return store


class TestAssemble:
    def test_exact_next_n_headers(self):
        view = simple_chain(6)
        store = HeaderImportStore()
        import_headers(store, [view.blocks[h].header for h in view.canonical_hashes()])
        state = ConfirmationState()
        segment = assemble_segment(store, state, 3)
        assert [h.height for h in segment.headers] == [0, 1, 2]
        state.record_segment(segment, b"\x01" * 32)
        nxt = assemble_segment(store, state, 3)
        # continuity: next segment starts right after the confirmed tip
        assert [h.height for h in nxt.headers] == [3, 4, 5]
        assert nxt.headers[0].parent == state.confirmed_hash

    def test_not_ready_without_enough_headers(self):
        view = simple_chain(2)
        store = HeaderImportStore()
        import_headers(store, [view.blocks[h].header for h in view.canonical_hashes()])
        state = ConfirmationState()
        assert assemble_segment(store, state, 5) is None

    def test_force_flag_cuts_short_segment_on_pending_data(self):
        producer = producer_with_contracts()
        store = synced(producer)
        state = ConfirmationState()
        segment = assemble_segment(store, state, 50, force_on_crosschain_data=True)
        assert segment is not None
        assert len(segment.headers) == store.last_height + 1
        assert len(segment.cross_txs) == 4

    def test_no_pending_data_no_force(self):
        view = simple_chain(2)
        store = HeaderImportStore()
        import_headers(store, [view.blocks[h].header for h in view.canonical_hashes()])
        state = ConfirmationState()
        assert assemble_segment(store, state, 5, force_on_crosschain_data=True) is None


def validated_segment(producer, n=50):
    store = synced(producer)
    state = ConfirmationState()
    segment = assemble_segment(store, state, n, force_on_crosschain_data=True)
    env = IsolatedEnv("env-gate")
    outcomes = replay_invocations(env, segment.cross_txs)
    return store, state, segment, outcomes


class TestMiningGate:
    def test_valid_segment_mined_with_nonempty_crosschain_subroot(self):
        from xchainlab.chain import compute_block_merkle
        from xchainlab.merkle import empty_root

        producer = producer_with_contracts()
        _, state, segment, outcomes = validated_segment(producer)
        consumer = ChainView(make_genesis(ChainId.CONSUMER))
        block = mine_confirmation(
            consumer, segment, default_segment_cfg(), outcomes=outcomes, state=state,
            timestamp=10_000,
        )
        tree, _, _ = compute_block_merkle(block.internal_txs, block.crosschain_payload)
        assert tree.crosschain_subroot != empty_root()
        consumer.apply_block(block)
        state.record_segment(segment, hash_header(block.header))
        assert state.confirmed_height == segment.last_height

    def test_mismatch_outcome_rejects_segment(self):
        from xchainlab.validator import Verdict

        producer = producer_with_contracts()
        _, state, segment, outcomes = validated_segment(producer)
        poisoned = [replace(o, verdict=Verdict.MISMATCH) if i == 0 else o
                    for i, o in enumerate(outcomes)]
        consumer = ChainView(make_genesis(ChainId.CONSUMER))
        with pytest.raises(SegmentRejected):
            mine_confirmation(
                consumer, segment, default_segment_cfg(), outcomes=poisoned, state=state,
            )

    def test_unvalidated_claim_rejects_segment(self):
        producer = producer_with_contracts()
        _, state, segment, _ = validated_segment(producer)
        consumer = ChainView(make_genesis(ChainId.CONSUMER))
        with pytest.raises(SegmentRejected):
            mine_confirmation(
                consumer, segment, default_segment_cfg(), outcomes=[], state=state,
            )

    def test_broken_link_rejected(self):
        producer = producer_with_contracts()
        _, state, segment, outcomes = validated_segment(producer)
        broken = CrossChainSegment(
            headers=segment.headers[:1] + segment.headers[2:],
            cross_txs=(),
        )
        consumer = ChainView(make_genesis(ChainId.CONSUMER))
        with pytest.raises(SegmentRejected):
            mine_confirmation(
                consumer, broken, default_segment_cfg(), outcomes=outcomes, state=state,
            )

    def test_first_header_gains_successors_inside_segment(self):
        # an n=3 segment stores the first header with 2 successors behind it
        view = simple_chain(3)
        store = HeaderImportStore()
        import_headers(store, [view.blocks[h].header for h in view.canonical_hashes()])
        state = ConfirmationState()
        segment = assemble_segment(store, state, 3)
        assert len(segment.headers) == 3
        first = segment.headers[0]
        successors = [h for h in segment.headers if h.height > first.height]
        assert len(successors) == 2
        assert successors[0].parent == hash_header(first)
        assert successors[1].parent == hash_header(successors[0])

    def test_oversize_segment_rejected_by_r1(self):
        view = simple_chain(5)
        store = HeaderImportStore()
        import_headers(store, [view.blocks[h].header for h in view.canonical_hashes()])
        state = ConfirmationState()
        segment = assemble_segment(store, state, 5)
        tiny = default_segment_cfg(max_block_size=91 * 3)
        consumer = ChainView(make_genesis(ChainId.CONSUMER))
        with pytest.raises(SegmentRejected):
            mine_confirmation(consumer, segment, tiny, outcomes=[], state=state)

    def test_segment_size_within_r1_for_auto_plan(self):
        producer = producer_with_contracts()
        _, _, segment, _ = validated_segment(producer)
        cfg = default_segment_cfg()
        assert len(segment.headers) * cfg.header_size < cfg.max_block_size
        assert len(encode_segment(segment)) < cfg.max_block_size


class TestDepth:
    def test_tip_depth_zero(self):
        view = simple_chain(4)
        assert confirmation_depth(view, view.canonical_head) == 0

    def test_six_successors_confirmed(self):
        view = simple_chain(7)
        target = view.canonical_hashes()[1]
        assert confirmation_depth(view, target) == 6
        assert is_confirmed(view, target, 6)
        assert not is_confirmed(view, view.canonical_head, 6)

    def test_depth_recomputed_after_rebranch(self):
        view = simple_chain(3)
        target = view.canonical_hashes()[1]
        assert confirmation_depth(view, target) == 2
        # overtaking fork from the same height-1 block
        parent = view.blocks[target].header
        for i in range(4):
            block = seal_block(parent, (), None, 0, timestamp=500 + i)
            view.apply_block(block)
            parent = block.header
        # hand count: new branch adds 4 blocks on top of height-1 target
        assert confirmation_depth(view, target) == 4

    def test_off_branch_block_rejected(self):
        view = simple_chain(3)
        side_parent = view.blocks[view.canonical_hashes()[1]].header
        side = seal_block(side_parent, (), None, 0, timestamp=999)
        view.apply_block(side)
        with pytest.raises(NotOnCanonicalBranch):
            confirmation_depth(view, hash_header(side.header))
        with pytest.raises(NotOnCanonicalBranch):
            confirmation_depth(view, b"\x42" * 32)


def confirmed_state_from(view, upto_height):
    store = HeaderImportStore()
    headers = [view.blocks[h].header for h in view.canonical_hashes()]
    import_headers(store, headers)
    state = ConfirmationState()
    segment = assemble_segment(store, state, upto_height + 1)
    state.record_segment(segment, b"\x99" * 32)
    return state


class TestConflicts:
    def test_honest_extension_no_conflict(self):
        view = simple_chain(6)
        state = confirmed_state_from(view, 3)
        incoming = [view.blocks[h].header for h in view.canonical_hashes()[4:]]
        report = detect_producer_conflict(state, incoming)
        assert report == ConflictReport(conflict=False)

    def test_rewritten_confirmed_height_conflicts(self):
        view = simple_chain(6)
        state = confirmed_state_from(view, 3)
        rewritten = replace(
            view.blocks[view.canonical_hashes()[2]].header, timestamp=123_456
        )
        report = detect_producer_conflict(state, [rewritten])
        assert report.conflict
        assert report.fork_height == 2
        assert report.confirmed_hash == state.hash_at(2)
        assert report.incoming_hash == hash_header(rewritten)

    def test_producer_rebranch_scenario_end_to_end(self):
        # producer confirms 4 headers, then rebranches below the confirmed
        # tip with a strictly longer branch; the consumer accepts it only
        # through a resolution segment and ends on the producer's branch
        view = simple_chain(3)
        state = confirmed_state_from(view, 3)
        assert state.confirmed_height == 3

        fork_parent = view.blocks[view.canonical_hashes()[2]].header
        rival = []
        parent = fork_parent
        for i in range(4):  # rival heights 3..6, tip exceeds confirmed tip
            block = seal_block(parent, (), None, 0, timestamp=700 + i)
            view.apply_block(block)
            rival.append(block.header)
            parent = block.header
        assert view.tip_height() == 6

        report = detect_producer_conflict(state, rival)
        assert report.conflict and report.fork_height == 3

        resolution = resolve_producer_conflict(state, rival)
        assert resolution.first_height == 3
        assert resolution.last_height == 6
        consumer = ChainView(make_genesis(ChainId.CONSUMER))
        block = mine_confirmation(
            consumer, resolution, default_segment_cfg(), outcomes=[], timestamp=1,
        )
        consumer.apply_block(block)
        apply_resolution(state, resolution, hash_header(block.header))

        # final confirmed view matches the producer's canonical branch
        assert state.confirmed_height == 6
        canonical = {
            view.blocks[h].header.height: h for h in view.canonical_hashes()
        }
        for height in range(0, 7):
            assert state.hash_at(height) == canonical[height]

    def test_equal_length_rival_holds_confirmed_branch(self):
        view = simple_chain(3)
        state = confirmed_state_from(view, 3)
        fork_parent = view.blocks[view.canonical_hashes()[2]].header
        rival = [seal_block(fork_parent, (), None, 0, timestamp=800).header]
        report = detect_producer_conflict(state, rival)
        assert report.conflict
        with pytest.raises(ConfirmationError):
            resolve_producer_conflict(state, rival)
        assert state.confirmed_height == 3

    def test_no_conflict_resolution_rejected(self):
        view = simple_chain(4)
        state = confirmed_state_from(view, 2)
        honest = [view.blocks[view.canonical_hashes()[3]].header]
        with pytest.raises(ConfirmationError):
            resolve_producer_conflict(state, honest)


class TestStateInvariants:
    def test_heights_gap_free_and_monotone(self):
        view = simple_chain(9)
        store = HeaderImportStore()
        import_headers(store, [view.blocks[h].header for h in view.canonical_hashes()])
        state = ConfirmationState()
        confirmed = []
        while True:
            segment = assemble_segment(store, state, 3)
            if segment is None:
                break
            state.record_segment(segment, len(confirmed).to_bytes(32, "big"))
            confirmed.append(segment)
        heights = [
            h for s in confirmed for h in range(s.first_height, s.last_height + 1)
        ]
        assert heights == list(range(0, 9))
        assert state.confirmed_height == 8

    def test_discontinuous_segment_rejected(self):
        view = simple_chain(6)
        store = HeaderImportStore()
        import_headers(store, [view.blocks[h].header for h in view.canonical_hashes()])
        state = ConfirmationState()
        first = assemble_segment(store, state, 3)
        later = CrossChainSegment(headers=first.headers[1:], cross_txs=())
        with pytest.raises(ConfirmationError):
            state.record_segment(later, b"\x00" * 32)


class TestLog:
    def test_jsonl_entries(self, tmp_path):
        producer = producer_with_contracts()
        _, state, segment, outcomes = validated_segment(producer)
        consumer = ChainView(make_genesis(ChainId.CONSUMER))
        block = mine_confirmation(
            consumer, segment, default_segment_cfg(), outcomes=outcomes, state=state,
            timestamp=3,
        )
        consumer.apply_block(block)
        state.record_segment(segment, hash_header(block.header))
        path = tmp_path / "confirmation.jsonl"
        write_confirmation_log(state, consumer, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        entry = json.loads(lines[0])
        assert entry["first_height"] == 0
        assert entry["last_height"] == segment.last_height
        assert entry["consumer_block"] == hash_header(block.header).hex()
        assert entry["depth"] == 0
        assert segment_log_entries(state, consumer)[0] == entry
