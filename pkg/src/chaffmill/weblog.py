"""Weblog records: Combined Log Format parsing/formatting and traffic synthesis.

One canonical line format is supported, the ubiquitous Combined Log Format:

    host ident authuser [date] "request" status bytes "referer" "user-agent"

``parse_clf`` accepts exactly the canonical grammar below and ``format_clf``
emits it, so the two are mutual inverses: ``format(parse(line)) == line`` on
every accepted line and ``parse(format(record)) == record`` on every valid
record. Canonicalization choices that remove the grammar's ambiguity:

  * timezone is fixed at ``+0000`` (timestamps are plain epoch seconds),
  * a byte count of 0 is written ``0``, never ``-`` (``-`` means absent),
  * an empty query string puts no ``?`` in the request target,
  * quoted sections (request, referer, user-agent) may not contain ``"``.

The generators synthesize session-structured visitor traffic from a
``TrafficModel``. Chaff content is drawn from the *same* model through the
same code path, only on a salted seed stream: fake data that differed in any
marginal distribution would be trivially distinguishable, which would defeat
the whole obfuscation scheme.
"""

from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass
from hashlib import sha256
from urllib.parse import quote

from .errors import ClfParseError

METHODS = ("GET", "POST", "PUT", "DELETE", "HEAD")

_MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_MONTH_INDEX = {name: i + 1 for i, name in enumerate(_MONTHS)}

# Cumulative days before each month (non-leap); leap day handled separately.
_DAYS_BEFORE_MONTH = (0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334)


@dataclass(frozen=True)
class LogRecord:
    """One parsed access-log line."""

    client_ip: str
    ident: str
    user: str
    timestamp: int  # seconds since epoch, UTC
    method: str
    path: str
    query: str  # no leading "?"; empty means no query section
    status: int
    response_bytes: int | None  # None renders as "-"
    referer: str
    user_agent: str
    protocol: str = "HTTP/1.0"

    def __post_init__(self) -> None:
        _validate_ipv4(self.client_ip)
        for name in ("ident", "user"):
            value = getattr(self, name)
            if not value or " " in value or '"' in value:
                raise ValueError(f"{name} must be non-empty and space/quote-free")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.path.startswith("/"):
            raise ValueError("path must start with '/'")
        for part in (self.path, self.query):
            if " " in part or '"' in part:
                raise ValueError("path/query must not contain spaces or double quotes")
        if not 100 <= self.status <= 599:
            raise ValueError(f"status must be in 100..599, got {self.status}")
        if self.response_bytes is not None and self.response_bytes < 0:
            raise ValueError("response_bytes must be non-negative or None")
        for name in ("referer", "user_agent"):
            value = getattr(self, name)
            if '"' in value or not value:
                raise ValueError(f"{name} must be non-empty and quote-free")
        if not (self.protocol.startswith("HTTP/") and len(self.protocol) == 8
                and self.protocol[5].isdigit() and self.protocol[6] == "."
                and self.protocol[7].isdigit()):
            raise ValueError(f"protocol must look like HTTP/x.y, got {self.protocol!r}")
        if not 0 <= self.timestamp < 253402300800:  # year 10000 cap keeps 4-digit years
            raise ValueError("timestamp out of representable range")


def _validate_ipv4(text: str) -> None:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"client_ip must be dotted-quad IPv4, got {text!r}")
    for part in parts:
        if not part.isdigit() or not 0 <= int(part) <= 255 or (part != "0" and part[0] == "0"):
            raise ValueError(f"client_ip must be dotted-quad IPv4, got {text!r}")


def _epoch_to_utc(ts: int) -> tuple[int, int, int, int, int, int]:
    days, rem = divmod(ts, 86400)
    hh, rem = divmod(rem, 3600)
    mm, ss = divmod(rem, 60)
    # civil-from-days (Howard Hinnant's algorithm), era-based
    days += 719468
    era = days // 146097
    doe = days - era * 146097
    yoe = (doe - doe // 1460 + doe // 36524 - doe // 146096) // 365
    year = yoe + era * 400
    doy = doe - (365 * yoe + yoe // 4 - yoe // 100)
    mp = (5 * doy + 2) // 153
    day = doy - (153 * mp + 2) // 5 + 1
    month = mp + 3 if mp < 10 else mp - 9
    year += month <= 2
    return year, month, day, hh, mm, ss


def _utc_to_epoch(year: int, month: int, day: int, hh: int, mm: int, ss: int) -> int:
    leap = year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)
    days_in_month = (31, 29 if leap else 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31)
    if not 1 <= day <= days_in_month[month - 1]:
        raise ValueError("day out of range for month")
    if not (0 <= hh <= 23 and 0 <= mm <= 59 and 0 <= ss <= 59):
        raise ValueError("time of day out of range")
    y = year - 1
    days = y * 365 + y // 4 - y // 100 + y // 400
    days += _DAYS_BEFORE_MONTH[month - 1] + (1 if leap and month > 2 else 0)
    days += day - 1
    return (days - 719162) * 86400 + hh * 3600 + mm * 60 + ss


class _Scanner:
    """Token scanner over one log line, tracking byte offsets for errors."""

    def __init__(self, line: str):
        self.line = line
        self.pos = 0

    def fail(self, reason: str) -> ClfParseError:
        return ClfParseError(self.pos, reason)

    def expect(self, literal: str, what: str) -> None:
        if not self.line.startswith(literal, self.pos):
            raise self.fail(f"expected {what}")
        self.pos += len(literal)

    def until(self, stop: str, what: str) -> str:
        end = self.line.find(stop, self.pos)
        if end < 0:
            raise self.fail(f"unterminated {what}")
        token = self.line[self.pos : end]
        self.pos = end
        return token

    def token(self, what: str) -> str:
        end = self.line.find(" ", self.pos)
        if end < 0:
            end = len(self.line)
        token = self.line[self.pos : end]
        if not token:
            raise self.fail(f"empty {what} field")
        self.pos = end
        return token

    def done(self) -> None:
        if self.pos != len(self.line):
            raise self.fail("trailing bytes after user-agent")


def parse_clf(line: bytes | str) -> LogRecord:
    """Parse one canonical Combined Log Format line.

    Raises :class:`ClfParseError` with the byte offset and the offending
    field; callers that process streams are expected to skip-and-count
    rather than abort.
    """
    if isinstance(line, (bytes, bytearray)):
        try:
            text = bytes(line).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ClfParseError(exc.start, "line is not valid UTF-8") from exc
    else:
        text = line
    if "\n" in text or "\r" in text:
        raise ClfParseError(max(text.find("\n"), text.find("\r")), "line contains a newline")

    s = _Scanner(text)
    host = s.token("host")
    try:
        _validate_ipv4(host)
    except ValueError:
        raise ClfParseError(0, "host is not a dotted-quad IPv4 address") from None
    s.expect(" ", "space after host")
    ident = s.token("ident")
    s.expect(" ", "space after ident")
    user = s.token("authuser")
    s.expect(" ", "space after authuser")

    s.expect("[", "'[' opening the date")
    date_start = s.pos
    date = s.until("]", "date section")
    timestamp = _parse_clf_date(s, date_start, date)
    s.expect("]", "']' closing the date")
    s.expect(' "', "quoted request section")

    request_start = s.pos
    request = s.until('"', "request section")
    method, path, query, protocol = _parse_request(s, request_start, request)
    s.expect('" ', "space after request")

    status_start = s.pos
    status_text = s.token("status")
    if not status_text.isdigit() or not 100 <= int(status_text) <= 599:
        raise ClfParseError(
            status_start, f"status must be a 3-digit code in 100..599, got {status_text!r}"
        )
    status = int(status_text)
    s.expect(" ", "space after status")

    bytes_start = s.pos
    bytes_text = s.token("bytes")
    if bytes_text == "-":
        response_bytes = None
    elif bytes_text.isdigit() and (bytes_text == "0" or bytes_text[0] != "0"):
        response_bytes = int(bytes_text)
    else:
        raise ClfParseError(
            bytes_start, f"bytes must be '-' or a decimal count, got {bytes_text!r}"
        )

    s.expect(' "', "quoted referer")
    referer = s.until('"', "referer")
    if not referer:
        raise s.fail("empty referer (use '-')")
    s.expect('" "', "quoted user-agent")
    user_agent = s.until('"', "user-agent")
    if not user_agent:
        raise s.fail("empty user-agent (use '-')")
    s.expect('"', "closing quote of user-agent")
    s.done()

    try:
        return LogRecord(
            client_ip=host,
            ident=ident,
            user=user,
            timestamp=timestamp,
            method=method,
            path=path,
            query=query,
            status=status,
            response_bytes=response_bytes,
            referer=referer,
            user_agent=user_agent,
            protocol=protocol,
        )
    except ValueError as exc:
        raise ClfParseError(0, str(exc)) from exc


def _parse_clf_date(s: _Scanner, start: int, date: str) -> int:
    # dd/Mon/yyyy:HH:MM:SS +0000, all widths fixed
    def bail(reason: str) -> ClfParseError:
        return ClfParseError(start, f"bad date: {reason}")

    if len(date) != 26:
        raise bail("wrong length")
    if date[2] != "/" or date[6] != "/" or date[11] != ":" or date[14] != ":" or date[17] != ":":
        raise bail("wrong separators")
    if date[20:] != " +0000":
        raise bail("timezone must be +0000")
    day_s, mon_s, year_s = date[0:2], date[3:6], date[7:11]
    hh_s, mm_s, ss_s = date[12:14], date[15:17], date[18:20]
    if mon_s not in _MONTH_INDEX:
        raise bail(f"unknown month {mon_s!r}")
    for part in (day_s, year_s, hh_s, mm_s, ss_s):
        if not part.isdigit():
            raise bail("non-digit in numeric field")
    try:
        return _utc_to_epoch(
            int(year_s), _MONTH_INDEX[mon_s], int(day_s), int(hh_s), int(mm_s), int(ss_s)
        )
    except ValueError as exc:
        raise bail(str(exc)) from exc


def _parse_request(s: _Scanner, start: int, request: str) -> tuple[str, str, str, str]:
    parts = request.split(" ")
    if len(parts) != 3:
        raise ClfParseError(start, "request must be 'METHOD target HTTP/x.y'")
    method, target, protocol = parts
    if method not in METHODS:
        raise ClfParseError(start, f"unsupported method {method!r}")
    if not target.startswith("/"):
        raise ClfParseError(start, "request target must start with '/'")
    path, sep, query = target.partition("?")
    if sep and not query:
        raise ClfParseError(start, "empty query after '?' is not canonical")
    if not (protocol.startswith("HTTP/") and len(protocol) == 8
            and protocol[5].isdigit() and protocol[6] == "." and protocol[7].isdigit()):
        raise ClfParseError(start, f"bad protocol {protocol!r}")
    return method, path, query, protocol


def format_clf(record: LogRecord) -> bytes:
    """Render the canonical CLF line for a record (no trailing newline)."""
    y, mo, d, hh, mm, ss = _epoch_to_utc(record.timestamp)
    date = f"{d:02d}/{_MONTHS[mo - 1]}/{y:04d}:{hh:02d}:{mm:02d}:{ss:02d} +0000"
    target = record.path + (f"?{record.query}" if record.query else "")
    size = "-" if record.response_bytes is None else str(record.response_bytes)
    line = (
        f"{record.client_ip} {record.ident} {record.user} [{date}] "
        f'"{record.method} {target} {record.protocol}" {record.status} {size} '
        f'"{record.referer}" "{record.user_agent}"'
    )
    return line.encode("utf-8")


@dataclass(frozen=True)
class TrafficModel:
    """Generative model for synthetic visitor traffic.

    ``page_catalog`` weights drive page popularity; a catalog entry for
    ``/search`` makes that share of requests carry a ``q=<term>`` query drawn
    from ``search_terms``. Visits are sessions: a visitor issues a
    geometric(mean=``requests_per_session_mean``) number of requests with
    inter-request gaps strictly below ``session_gap_seconds``.
    """

    page_catalog: tuple[tuple[str, float], ...]
    search_terms: tuple[tuple[str, float], ...] = ()
    ip_pool_size: int = 500
    session_gap_seconds: int = 1800
    requests_per_session_mean: float = 8.0
    time_span: tuple[int, int] = (1_000_000_000, 1_000_604_800)

    def __post_init__(self) -> None:
        if not self.page_catalog:
            raise ValueError("page_catalog must be non-empty")
        for name, weights in (("page", self.page_catalog), ("term", self.search_terms)):
            for _, w in weights:
                if not (w > 0 and math.isfinite(w)):
                    raise ValueError(f"{name} weights must be positive and finite")
        if self.ip_pool_size <= 0:
            raise ValueError("ip_pool_size must be positive")
        if self.session_gap_seconds <= 0:
            raise ValueError("session_gap_seconds must be positive")
        if self.requests_per_session_mean < 1:
            raise ValueError("requests_per_session_mean must be >= 1")
        start, end = self.time_span
        if not 0 <= start < end:
            raise ValueError("time_span start must be >= 0 and precede end")


_STATUS_WEIGHTS = ((200, 88.0), (304, 6.0), (404, 4.0), (302, 1.0), (500, 1.0))
_METHOD_WEIGHTS = (("GET", 94.0), ("POST", 4.0), ("HEAD", 2.0))
_USER_AGENTS = (
    ("Mozilla/5.0 (X11; Linux x86_64) Gecko/20100101 Firefox/115.0", 30.0),
    ("Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 Chrome/120.0 Safari/537.36", 45.0),
    ("Mozilla/5.0 (Macintosh; Intel Mac OS X 13_4) AppleWebKit/605.1.15 Safari/605.1.15", 15.0),
    ("Mozilla/5.0 (iPhone; CPU iPhone OS 16_5 like Mac OS X) Mobile/15E148", 8.0),
    ("curl/8.1.2", 2.0),
)
_USERS = ("-", "-", "-", "-", "-", "-", "-", "-", "-", "alice", "bob", "carol")


class _WeightedChoice:
    """Cumulative-weight sampler bound to one population."""

    def __init__(self, pairs):
        self.values = [v for v, _ in pairs]
        self.cum = []
        total = 0.0
        for _, w in pairs:
            total += w
            self.cum.append(total)
        self.total = total

    def draw(self, rng: random.Random):
        x = rng.random() * self.total
        return self.values[min(bisect_right(self.cum, x), len(self.values) - 1)]


def _geometric(rng: random.Random, mean: float) -> int:
    p = 1.0 / mean
    if p >= 1.0:
        return 1
    u = rng.random()
    return max(1, math.ceil(math.log1p(-u) / math.log1p(-p)))


def _make_ip_pool(rng: random.Random, size: int) -> list[str]:
    pool = []
    for _ in range(size):
        a = rng.randint(1, 223)
        b, c = rng.randint(0, 255), rng.randint(0, 255)
        d = rng.randint(1, 254)
        pool.append(f"{a}.{b}.{c}.{d}")
    return pool


def generate_wheat(model: TrafficModel, n: int, seed: int) -> list[LogRecord]:
    """Generate ``n`` session-structured records, a pure function of inputs.

    Records come out sorted by timestamp, the shape a collected log file has.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = random.Random(seed)
    pages = _WeightedChoice(model.page_catalog)
    terms = _WeightedChoice(model.search_terms) if model.search_terms else None
    statuses = _WeightedChoice(_STATUS_WEIGHTS)
    methods = _WeightedChoice(_METHOD_WEIGHTS)
    agents = _WeightedChoice(_USER_AGENTS)
    referers = _WeightedChoice(
        (("-", 40.0),) + tuple((f"http://shop.example.com{p}", w) for p, w in model.page_catalog)
    )
    pool = _make_ip_pool(rng, model.ip_pool_size)
    t0, t1 = model.time_span

    records: list[LogRecord] = []
    while len(records) < n:
        ip = pool[rng.randrange(len(pool))]
        user = _USERS[rng.randrange(len(_USERS))]
        t = rng.randint(t0, t1 - 1)
        for i in range(_geometric(rng, model.requests_per_session_mean)):
            if len(records) >= n:
                break
            if i > 0 and model.session_gap_seconds > 1:
                t += rng.randint(1, model.session_gap_seconds - 1)
            path = pages.draw(rng)
            query = ""
            if path == "/search" and terms is not None:
                query = "q=" + quote(terms.draw(rng), safe="")
            status = statuses.draw(rng)
            size = 0 if status == 304 else int(rng.lognormvariate(8.5, 1.2))
            records.append(
                LogRecord(
                    client_ip=ip,
                    ident="-",
                    user=user,
                    timestamp=t,
                    method=methods.draw(rng),
                    path=path,
                    query=query,
                    status=status,
                    response_bytes=size,
                    referer=referers.draw(rng),
                    user_agent=agents.draw(rng),
                )
            )
    records.sort(key=lambda r: r.timestamp)
    return records


def _salt_seed(label: bytes, seed: int) -> int:
    digest = sha256(label + seed.to_bytes(8, "big", signed=False)).digest()
    return int.from_bytes(digest[:8], "big")


def generate_chaff_content(model: TrafficModel, n: int, seed: int) -> list[LogRecord]:
    """Generate fake records from the same distributions as real traffic.

    Identical code path to :func:`generate_wheat` on a salted seed stream, so
    no field marks the output as fake and every marginal matches, while the
    same numeric seed never reproduces a real agent's records.
    """
    return generate_wheat(model, n, _salt_seed(b"chaff", seed))
