"""Per-node forwarding logs, Merkle commitments and route audits.

Every node keeps an append-only log of the packets it handled and commits
it to a Merkle root.  A source audits a route by deriving the records each
participant must be able to prove (via inference rules over its own log)
and checking inclusion proofs against the published roots.  Three checks
compose: destination verification, reverse-scan active-attacker location,
and forward-scan passive-dropper listing.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .crypto import Pseudonym

LEAF_TAG = b"\x00"
NODE_TAG = b"\x01"
EMPTY_TAG = b"\x02"


class EventKind(Enum):
    RECEIVED = 1
    FORWARDED = 2
    REPLIED = 3
    DROPPED = 4


@dataclass(frozen=True)
class LogEntry:
    node_alias: Pseudonym
    packet_id: int
    event: EventKind
    sseq: int
    oseq: int
    dseq: int
    prev_hop_alias: Pseudonym
    timestamp: float


def serialize_entry(entry: LogEntry) -> bytes:
    """Canonical byte encoding: fixed field order, 8-byte big-endian
    integers, 32-byte aliases, 1-byte event code."""
    return b"".join((
        entry.node_alias.digest,
        entry.packet_id.to_bytes(8, "big"),
        bytes([entry.event.value]),
        struct.pack(">q", entry.sseq),
        struct.pack(">q", entry.oseq),
        struct.pack(">q", entry.dseq),
        entry.prev_hop_alias.digest,
        struct.pack(">d", entry.timestamp),
    ))


def leaf_hash(entry: LogEntry) -> bytes:
    return hashlib.sha256(LEAF_TAG + serialize_entry(entry)).digest()


def _interior(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_TAG + left + right).digest()


EMPTY_ROOT = hashlib.sha256(EMPTY_TAG).digest()


class MerkleTree:
    """Binary hash tree over ordered leaves; odd node promoted unhashed."""

    def __init__(self, leaves: Sequence[bytes]):
        self.leaves = list(leaves)
        self.levels = [list(self.leaves)]
        level = self.levels[0]
        while len(level) > 1:
            nxt = []
            for i in range(0, len(level) - 1, 2):
                nxt.append(_interior(level[i], level[i + 1]))
            if len(level) % 2:
                nxt.append(level[-1])
            self.levels.append(nxt)
            level = nxt
        self.root = level[0] if level else EMPTY_ROOT

    def proof(self, index: int) -> list[tuple[bytes, bool]]:
        """Inclusion proof: (sibling, sibling_is_left) pairs, leaf to root."""
        out = []
        for level in self.levels[:-1]:
            sib = index ^ 1
            if sib < len(level):
                out.append((level[sib], sib < index))
            index //= 2
        return out

    @staticmethod
    def verify(root: bytes, leaf: bytes,
               proof: Sequence[tuple[bytes, bool]]) -> bool:
        node = leaf
        try:
            for sibling, is_left in proof:
                node = _interior(sibling, node) if is_left else _interior(node, sibling)
        except (TypeError, ValueError):
            return False
        return node == root


def build_root(entries: Sequence[LogEntry]) -> bytes:
    return MerkleTree([leaf_hash(e) for e in entries]).root


@dataclass(frozen=True)
class MerkleCommitment:
    leaves: tuple[bytes, ...]
    root: bytes


@dataclass
class PublishedLog:
    """What an audited node hands the auditor: its committed root plus the
    entries it claims, each with an inclusion proof."""
    commitment: MerkleCommitment
    claimed: list[tuple[LogEntry, list[tuple[bytes, bool]]]]


class DuplicateEntryError(Exception):
    pass


class TimestampRegressionError(Exception):
    pass


class NodeLog:
    """Append-only evidence log; leaf hashes are kept so commitments are
    recomputed only when asked for."""

    def __init__(self):
        self.entries: list[LogEntry] = []
        self._leaves: list[bytes] = []
        self._keys: set[tuple[bytes, int, EventKind]] = set()
        self._last_ts = float("-inf")

    def append(self, entry: LogEntry) -> None:
        if entry.timestamp < self._last_ts:
            raise TimestampRegressionError(
                f"timestamp {entry.timestamp} precedes {self._last_ts}")
        key = (entry.node_alias.digest, entry.packet_id, entry.event)
        if key in self._keys:
            raise DuplicateEntryError(f"duplicate entry {key}")
        self._keys.add(key)
        self._last_ts = entry.timestamp
        self.entries.append(entry)
        self._leaves.append(leaf_hash(entry))

    def commitment(self) -> MerkleCommitment:
        return MerkleCommitment(tuple(self._leaves),
                                MerkleTree(self._leaves).root)

    def publish(self) -> PublishedLog:
        tree = MerkleTree(self._leaves)
        claimed = [(e, tree.proof(i)) for i, e in enumerate(self.entries)]
        return PublishedLog(MerkleCommitment(tuple(tree.leaves), tree.root), claimed)


@dataclass(frozen=True)
class Pattern:
    """Conjunctive match over LogEntry fields; None is a wildcard."""
    node_alias: Optional[Pseudonym] = None
    packet_id: Optional[int] = None
    event: Optional[EventKind] = None
    sseq: Optional[int] = None
    oseq: Optional[int] = None
    dseq: Optional[int] = None
    prev_hop_alias: Optional[Pseudonym] = None

    def matches(self, entry: LogEntry) -> bool:
        return ((self.node_alias is None or self.node_alias == entry.node_alias)
                and (self.packet_id is None or self.packet_id == entry.packet_id)
                and (self.event is None or self.event == entry.event)
                and (self.sseq is None or self.sseq == entry.sseq)
                and (self.oseq is None or self.oseq == entry.oseq)
                and (self.dseq is None or self.dseq == entry.dseq)
                and (self.prev_hop_alias is None
                     or self.prev_hop_alias == entry.prev_hop_alias))

    def bound(self, packet_id: int) -> "Pattern":
        return Pattern(self.node_alias, packet_id, self.event, self.sseq,
                       self.oseq, self.dseq, self.prev_hop_alias)


@dataclass(frozen=True)
class Rule:
    """If every lhs pattern is present in the auditor's log, the rhs record
    must exist at the audited node.  With bind_packet the rule instantiates
    once per packet id satisfying the lhs."""
    lhs: tuple[Pattern, ...]
    rhs: Pattern
    bind_packet: bool = True

    def __post_init__(self):
        if not self.lhs:
            raise ValueError("rule lhs must be non-empty")


def apply_rules(rules: Sequence[Rule],
                observed: Sequence[LogEntry]) -> list[Pattern]:
    """Expected record patterns, in rule order then packet-id order."""
    out: list[Pattern] = []
    for rule in rules:
        if rule.bind_packet:
            pids = sorted({e.packet_id for e in observed})
            for pid in pids:
                if all(any(p.bound(pid).matches(e) for e in observed)
                       for p in rule.lhs):
                    out.append(rule.rhs.bound(pid))
        else:
            if all(any(p.matches(e) for e in observed) for p in rule.lhs):
                out.append(rule.rhs)
    return out


FELLOW = "FELLOW"
NOT_FELLOW = "NOT_FELLOW"
TARGET = "Target"


def _proves(published: PublishedLog, pattern: Pattern) -> bool:
    root = published.commitment.root
    for entry, proof in published.claimed:
        if pattern.matches(entry) and MerkleTree.verify(root, leaf_hash(entry), proof):
            return True
    return False


def hash_verify(published: PublishedLog,
                expected: Sequence[Pattern]) -> str:
    """FELLOW iff every expected pattern matches a committed leaf whose
    inclusion proof verifies against the published root."""
    if published is None:
        return NOT_FELLOW
    for pattern in expected:
        if not _proves(published, pattern):
            return NOT_FELLOW
    return FELLOW


def check_destination(tau_c: Sequence[LogEntry], rules_to_dest: Sequence[Rule],
                      dest_published: Optional[PublishedLog]) -> str:
    if dest_published is None:
        return NOT_FELLOW
    collection = apply_rules(rules_to_dest, tau_c)
    outcome = FELLOW
    for pattern in collection:
        if not _proves(dest_published, pattern):
            outcome = NOT_FELLOW
            break
    return outcome


def detect_active_attacker(route_logs: Sequence[Optional[PublishedLog]],
                           tau_c: Sequence[LogEntry],
                           rules_to_mid: Sequence[Rule]):
    """Reverse scan of the intermediaries.  The deepest node whose records
    all verify locates the forger immediately downstream of it; if even the
    last intermediary verifies the destination itself lied."""
    n = len(route_logs)
    if n == 0:
        raise ValueError("no intermediaries")
    collection = apply_rules(rules_to_mid, tau_c)
    for m in range(n, 0, -1):
        published = route_logs[m - 1]
        flag = 0
        for pattern in collection:
            if published is None or not _proves(published, pattern):
                flag = 1
                break
        if flag == 0:
            if m == n:
                return TARGET
            return m + 1
    return 1


def detect_passive_attackers(route_logs: Sequence[Optional[PublishedLog]],
                             tau_c: Sequence[LogEntry],
                             tau_d: Sequence[LogEntry],
                             rules_combined: Sequence[Rule]) -> list[int]:
    """Forward scan; a node is fake when it cannot prove the records
    expected of it.  Each hop is only held to the packets its verified
    upstream actually passed on, so droppers do not taint honest nodes
    downstream of them."""
    if not route_logs:
        return []
    observed = list(tau_c) + list(tau_d)
    collection = apply_rules(rules_combined, observed)
    audited_pids = sorted({p.packet_id for p in collection if p.packet_id is not None})
    unbound = [p for p in collection if p.packet_id is None]
    fake: list[int] = []
    for j, published in enumerate(route_logs, start=1):
        expected = [p.bound(pid) for pid in audited_pids
                    for p in collection if p.packet_id == pid] + unbound
        for pattern in expected:
            if published is None or not _proves(published, pattern):
                fake.append(j)
                break
        if published is None:
            audited_pids = []
            continue
        audited_pids = [pid for pid in audited_pids
                        if _proves(published,
                                   Pattern(packet_id=pid, event=EventKind.FORWARDED))]
    return fake


@dataclass
class AuditReport:
    verdict: str
    active_attacker: Optional[int] = None
    target_lied: bool = False
    passive_attackers: list[int] = field(default_factory=list)

    def csv_row(self, flow_id) -> str:
        active = "" if self.active_attacker is None else str(self.active_attacker)
        if self.target_lied:
            active = "target"
        passive = ";".join(str(p) for p in self.passive_attackers)
        return f"{flow_id},{self.verdict},{active},{passive}"


def audit_route(route_logs: Sequence[Optional[PublishedLog]],
                dest_published: Optional[PublishedLog],
                tau_c_control: Sequence[LogEntry],
                tau_c_data: Sequence[LogEntry],
                tau_d: Sequence[LogEntry],
                rules_to_dest: Sequence[Rule],
                rules_to_mid: Sequence[Rule],
                rules_combined: Sequence[Rule]) -> AuditReport:
    """Destination check first; its verdict dispatches to the active-attack
    scan (reverse) or the passive-dropper scan (forward)."""
    verdict = check_destination(tau_c_control, rules_to_dest, dest_published)
    if verdict != FELLOW:
        if not route_logs:
            return AuditReport(NOT_FELLOW, target_lied=True)
        result = detect_active_attacker(route_logs, tau_c_control, rules_to_mid)
        if result == TARGET:
            return AuditReport(NOT_FELLOW, target_lied=True)
        return AuditReport(NOT_FELLOW, active_attacker=result)
    passive = detect_passive_attackers(route_logs, tau_c_data, tau_d, rules_combined)
    return AuditReport(FELLOW, passive_attackers=passive)


def entry_to_list(entry: LogEntry) -> list:
    """Plain-data form of a log entry for trace export."""
    return [entry.node_alias.digest.hex(), entry.packet_id, entry.event.value,
            entry.sseq, entry.oseq, entry.dseq,
            entry.prev_hop_alias.digest.hex(), entry.timestamp]


def entry_from_list(data: Sequence) -> LogEntry:
    return LogEntry(Pseudonym(bytes.fromhex(data[0])), int(data[1]),
                    EventKind(int(data[2])), int(data[3]), int(data[4]),
                    int(data[5]), Pseudonym(bytes.fromhex(data[6])),
                    float(data[7]))


def intermediary_rules() -> list[Rule]:
    """A relayed packet must appear as Received and as Forwarded."""
    sent = Pattern(event=EventKind.FORWARDED)
    return [
        Rule(lhs=(sent,), rhs=Pattern(event=EventKind.RECEIVED)),
        Rule(lhs=(sent,), rhs=Pattern(event=EventKind.FORWARDED)),
    ]


def destination_rules() -> list[Rule]:
    """The destination must have received the request and replied to it."""
    sent = Pattern(event=EventKind.FORWARDED)
    return [
        Rule(lhs=(sent,), rhs=Pattern(event=EventKind.RECEIVED)),
        Rule(lhs=(sent,), rhs=Pattern(event=EventKind.REPLIED)),
    ]


def combined_rules() -> list[Rule]:
    return intermediary_rules()
