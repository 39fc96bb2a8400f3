import random

import pytest
from scipy.stats import chisquare

from chaffmill.errors import PayloadError
from chaffmill.tagging import (
    SecretKey,
    Tag,
    TaggedRecord,
    compute_agent_token,
    compute_record_mac,
    constant_time_equal,
    generate_key,
    mac_from_hex,
    mac_hex,
    make_chaff_record,
    make_wheat_record,
    validate_agent_id,
    verify_record,
    winnow_records,
)

ZERO_KEY = SecretKey(bytes(32))

# Pinned from an independent RFC-2104 HMAC implementation (ipad/opad from the
# definition, itself validated against RFC 4231 test case 2) run before this
# module was written.
RECORD_MAC_A0 = "185f026733e217648f3d449c968a27e37001e51fdf8ff95f2084e6b9dbd13492"
RECORD_MAC_A1 = "fdc3f9001b7f4d6ebd0cea659e8de1f1fbb7f26c922fe37e89620a937f17dbc2"
AGENT_TOKEN_01 = "8d17c53ae38b203e2a25ea8ef5eb8801730239ece1f5560dcf39869a60808ed2"


class TestRecordMac:
    def test_pinned_vector(self):
        assert compute_record_mac(ZERO_KEY, "a", 0, b"").hex() == RECORD_MAC_A0

    def test_deterministic(self):
        one = compute_record_mac(ZERO_KEY, "a", 0, b"payload")
        two = compute_record_mac(ZERO_KEY, "a", 0, b"payload")
        assert one == two

    def test_seq_changes_mac(self):
        assert compute_record_mac(ZERO_KEY, "a", 1, b"").hex() == RECORD_MAC_A1
        assert RECORD_MAC_A1 != RECORD_MAC_A0

    def test_every_field_bound(self):
        base = compute_record_mac(ZERO_KEY, "agent", 5, b"data")
        assert compute_record_mac(ZERO_KEY, "agenu", 5, b"data") != base
        assert compute_record_mac(ZERO_KEY, "agent", 6, b"data") != base
        assert compute_record_mac(ZERO_KEY, "agent", 5, b"datb") != base
        assert compute_record_mac(generate_key(seed=9), "agent", 5, b"data") != base

    def test_domain_separation_from_token(self):
        # same key, overlapping byte material: roles can never collide
        mac = compute_record_mac(ZERO_KEY, "x", 1, b"")
        token = compute_agent_token(ZERO_KEY, "x", 1)
        assert mac != token

    def test_newline_payload_rejected(self):
        with pytest.raises(PayloadError):
            compute_record_mac(ZERO_KEY, "a", 0, b"bad\nline")
        with pytest.raises(PayloadError):
            compute_record_mac(ZERO_KEY, "a", 0, b"bad\rline")


class TestAgentToken:
    def test_pinned_vector(self):
        assert compute_agent_token(ZERO_KEY, "agent-01", 1).hex() == AGENT_TOKEN_01

    def test_repeat_identical(self):
        assert compute_agent_token(ZERO_KEY, "a", 3) == compute_agent_token(ZERO_KEY, "a", 3)

    def test_key_separates(self):
        k1, k2 = generate_key(seed=1), generate_key(seed=2)
        assert compute_agent_token(k1, "a", 1) != compute_agent_token(k2, "a", 1)

    def test_epoch_separates(self):
        assert compute_agent_token(ZERO_KEY, "a", 1) != compute_agent_token(ZERO_KEY, "a", 2)


class TestVerify:
    def test_round_trip(self, shared_key):
        record = make_wheat_record(shared_key, "agent-1", 7, b"some log line")
        assert verify_record(shared_key, record)

    def test_wrong_key_fails(self, shared_key, fake_key):
        record = make_wheat_record(shared_key, "agent-1", 7, b"some log line")
        assert not verify_record(fake_key, record)

    def test_bit_flips_rejected(self, shared_key):
        rng = random.Random(99)
        false_accepts = 0
        flips = 0
        for i in range(120):
            payload = bytes(rng.randrange(32, 127) for _ in range(rng.randrange(1, 60)))
            record = make_wheat_record(shared_key, f"agent-{i % 7}", i, payload)
            for _ in range(10):
                field = rng.randrange(3)
                if field == 0:  # payload bit
                    data = bytearray(record.payload)
                    if not data:
                        continue
                    data[rng.randrange(len(data))] ^= 1 << rng.randrange(8)
                    if b"\n" in data or b"\r" in data:
                        continue
                    mutated = TaggedRecord(tag=record.tag, payload=bytes(data))
                elif field == 1:  # mac bit
                    mac = bytearray(record.tag.mac)
                    mac[rng.randrange(32)] ^= 1 << rng.randrange(8)
                    mutated = TaggedRecord(
                        tag=Tag(record.tag.agent_id, record.tag.seq, bytes(mac)),
                        payload=record.payload,
                    )
                else:  # seq bit
                    mutated = TaggedRecord(
                        tag=Tag(
                            record.tag.agent_id,
                            record.tag.seq ^ (1 << rng.randrange(64)),
                            record.tag.mac,
                        ),
                        payload=record.payload,
                    )
                flips += 1
                false_accepts += verify_record(shared_key, mutated)
        assert flips >= 1000
        assert false_accepts == 0


class TestChaff:
    def test_chaff_verifies_under_own_key_only(self, shared_key, fake_key):
        chaff = make_chaff_record(fake_key, "agent-2", 0, b"chaff line")
        assert verify_record(fake_key, chaff)
        assert not verify_record(shared_key, chaff)

    def test_chaff_never_passes_shared_key(self, shared_key, fake_key):
        accepted = 0
        for i in range(10000):
            chaff = make_chaff_record(fake_key, "agent-2", i, b"line %d" % i)
            accepted += verify_record(shared_key, chaff)
        assert accepted == 0

    def test_mac_bytes_uniform_for_both_kinds(self, shared_key, fake_key):
        # chi-square uniformity per byte position over 10k wheat + 10k chaff;
        # HMAC output should be indistinguishable from random in both
        wheat_macs = [
            make_wheat_record(shared_key, "w", i, b"p%d" % i).tag.mac for i in range(10000)
        ]
        chaff_macs = [
            make_chaff_record(fake_key, "c", i, b"p%d" % i).tag.mac for i in range(10000)
        ]
        for macs in (wheat_macs, chaff_macs):
            worst = 1.0
            for pos in range(32):
                counts = [0] * 256
                for mac in macs:
                    counts[mac[pos]] += 1
                p = chisquare(counts).pvalue
                worst = min(worst, p)
            # 32 positions at significance 0.01 each; all must clear it
            assert worst >= 0.01, f"byte-position uniformity broke: p={worst}"

    def test_structural_indistinguishability(self, shared_key, fake_key):
        payload = b"equal length payload!"
        wheat = make_wheat_record(shared_key, "agent-x", 3, payload)
        chaff = make_chaff_record(fake_key, "agent-y", 3, payload)
        assert len(wheat.tag.mac) == len(chaff.tag.mac) == 32
        assert len(wheat.payload) == len(chaff.payload)
        # identical field inventories, no extra attributes on either
        assert wheat.__dataclass_fields__.keys() == chaff.__dataclass_fields__.keys()


class TestWinnow:
    def test_wheat_only_identity(self, shared_key):
        records = [make_wheat_record(shared_key, "a", i, b"x%d" % i) for i in range(50)]
        assert winnow_records(shared_key, records) == records

    def test_chaff_only_empty(self, shared_key, fake_key):
        records = [make_chaff_record(fake_key, "a", i, b"x%d" % i) for i in range(500)]
        assert winnow_records(shared_key, records) == []

    def test_interleaved_recovers_wheat_in_order(self, shared_key, fake_key):
        rng = random.Random(7)
        for trial in range(20):
            n_wheat = rng.randrange(0, 100)
            n_chaff = rng.randrange(0, 100)
            wheat = [make_wheat_record(shared_key, "w", i, b"w%d" % i) for i in range(n_wheat)]
            chaff = [make_chaff_record(fake_key, "c", i, b"c%d" % i) for i in range(n_chaff)]
            mixed = wheat + chaff
            rng.shuffle(mixed)
            kept = winnow_records(shared_key, mixed)
            # exactly the wheat subsequence, in its post-shuffle relative order
            wheat_ids = {id(w) for w in wheat}
            assert kept == [r for r in mixed if id(r) in wheat_ids]


class TestConstantTime:
    def test_comparator_touches_every_byte(self):
        class Instrumented:
            def __init__(self, data):
                self.data = data
                self.touched = 0

            def __len__(self):
                return len(self.data)

            def __iter__(self):
                for b in self.data:
                    self.touched += 1
                    yield b

        # first byte already differs; a short-circuiting comparator would stop
        a = Instrumented([1] + [0] * 31)
        b = Instrumented([2] + [0] * 31)
        assert not constant_time_equal(a, b)
        assert a.touched == 32 and b.touched == 32

        equal_a = Instrumented([5] * 32)
        equal_b = Instrumented([5] * 32)
        assert constant_time_equal(equal_a, equal_b)
        assert equal_a.touched == 32

    def test_length_mismatch_false(self):
        assert not constant_time_equal(b"\x00" * 31, b"\x00" * 32)


class TestTypes:
    def test_key_length_enforced(self):
        with pytest.raises(ValueError):
            SecretKey(b"short")

    def test_key_repr_redacts(self):
        assert "redacted" in repr(generate_key(seed=1))
        assert generate_key(seed=1).hex() not in repr(generate_key(seed=1))

    def test_generated_keys_differ_by_seed(self):
        assert generate_key(seed=1) != generate_key(seed=2)
        assert generate_key(seed=1) == generate_key(seed=1)
        assert generate_key() != generate_key()

    def test_key_hex_round_trip(self):
        key = generate_key(seed=3)
        assert SecretKey.from_hex(key.hex()) == key

    def test_agent_id_rules(self):
        validate_agent_id("agent-01")
        validate_agent_id("a" * 64)
        for bad in ("", "a" * 65, "tab\tid", "nl\nid", "ctrl\x01", "caf\xe9"):
            with pytest.raises(ValueError):
                validate_agent_id(bad)

    def test_mac_hex_round_trip(self):
        mac = compute_record_mac(ZERO_KEY, "a", 0, b"")
        text = mac_hex(mac)
        assert len(text) == 64 and text == text.lower()
        assert mac_from_hex(text) == mac

    def test_mac_hex_rejects_uppercase(self):
        with pytest.raises(ValueError):
            mac_from_hex(RECORD_MAC_A0.upper())

    def test_record_payload_newline_rejected(self):
        tag = Tag("a", 0, bytes(32))
        with pytest.raises(PayloadError):
            TaggedRecord(tag=tag, payload=b"has\nnewline")
