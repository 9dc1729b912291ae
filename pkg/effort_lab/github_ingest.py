"""
Monthly repository activity from the GitHub REST API.

Raw pages are cached on disk as returned by the API (one file per
endpoint page plus an `index.json` manifest), so a repeated collection over an
unchanged cache never touches the network and aggregates identically.
Network access is opt-in through `allow_network`.

Bucketing rules, all on UTC calendar months:
  commits / contributors   commit author date; contributors = distinct authors
  open / closed / merged   PR created_at / closed_at (merged_at for merged PRs) / merged_at
  PR_mergers               distinct actors of `merged` issue events
  PR_comments              review comments plus conversation comments on PRs
  issues                   created_at / closed_at of issues that are not PRs
  stargazers / forks       starred_at / fork created_at
  watchers                 WatchEvent created_at from the public event feed
"""
from __future__ import annotations

import asyncio
import json
import logging
import time
from collections import defaultdict
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, Set, Tuple, Union

import httpx
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from effort_lab.activity import ACTIVITY_FEATURES, FIXTURE_COLUMNS, ActivitySeries, MonthlyActivity, month_end, next_month_end
from effort_lab.exceptions import (
    AuthenticationError,
    FixtureError,
    NetworkDisabledError,
    NetworkError,
    RateLimitError,
    RepoNotFoundError,
)
from effort_lab.utils.error_handler import error_handler
from effort_lab.utils.settings import Settings, get_api_token

logger = logging.getLogger(__name__)

# slug -> (path under /repos/{owner}/{name}, Accept header)
ENDPOINTS: Dict[str, Tuple[str, str]] = {
    "commits": ("commits", "application/vnd.github+json"),
    "commit_comments": ("comments", "application/vnd.github+json"),
    "pulls": ("pulls?state=all", "application/vnd.github+json"),
    "issues": ("issues?state=all", "application/vnd.github+json"),
    "issue_comments": ("issues/comments", "application/vnd.github+json"),
    "review_comments": ("pulls/comments", "application/vnd.github+json"),
    "issue_events": ("issues/events", "application/vnd.github+json"),
    "stargazers": ("stargazers", "application/vnd.github.star+json"),
    "forks": ("forks", "application/vnd.github+json"),
    "events": ("events", "application/vnd.github+json"),
}

FIELD_BY_COLUMN = dict(zip(ACTIVITY_FEATURES, (
    "commits", "commit_comments", "contributors", "open_prs", "closed_prs", "merged_prs", "pr_mergers",
    "pr_comments", "open_issues", "closed_issues", "issue_comments", "stargazers", "forks", "watchers",
)))

SleepFn = Callable[[float], Awaitable[None]]


class CollectionSpec(BaseModel):
    """What to collect: one repository over a date range."""

    model_config = ConfigDict(frozen=True)

    repo: str = Field(pattern=r"^[A-Za-z0-9_.-]+/[A-Za-z0-9_.-]+$")
    start: date
    end: date
    token_env: str = "GITHUB_TOKEN"
    cache_dir: Path = Settings.CACHE_DIR

    @model_validator(mode="after")
    def _check_range(self) -> "CollectionSpec":
        if not self.start < self.end:
            raise ValueError(f"start {self.start} must precede end {self.end}")
        return self

    @property
    def repo_id(self) -> str:
        return self.repo.replace("/", "__")


def parse_timestamp(value: str) -> datetime:
    """ISO-8601 timestamp normalised to UTC."""
    stamp = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(timezone.utc)


def _month_of(value: Optional[str]) -> Optional[date]:
    if not value:
        return None
    stamp = parse_timestamp(value)
    return month_end(stamp.year, stamp.month)


def _issue_number(url: Optional[str]) -> Optional[int]:
    if not url:
        return None
    try:
        return int(url.rstrip("/").rsplit("/", 1)[-1])
    except ValueError:
        return None


def _commit_author(item: Dict[str, Any]) -> str:
    if item.get("author") and item["author"].get("login"):
        return item["author"]["login"]
    author = (item.get("commit") or {}).get("author") or {}
    return author.get("email") or author.get("name") or "unknown"


def bucket_activity(repo_id: str, start: date, end: date, pages: Dict[str, List[Dict[str, Any]]]) -> ActivitySeries:
    """Aggregate raw endpoint items into one MonthlyActivity per month of [start, end]."""
    months: List[date] = []
    current, last = month_end(start.year, start.month), month_end(end.year, end.month)
    while current <= last:
        months.append(current)
        current = next_month_end(current)
    window = set(months)

    counts: Dict[date, Dict[str, int]] = {m: defaultdict(int) for m in months}
    authors: Dict[date, Set[str]] = defaultdict(set)
    mergers: Dict[date, Set[str]] = defaultdict(set)

    def bump(month: Optional[date], name: str) -> None:
        if month in window:
            counts[month][name] += 1

    for item in pages.get("commits", []):
        commit = item.get("commit") or {}
        stamp = (commit.get("author") or {}).get("date") or (commit.get("committer") or {}).get("date")
        month = _month_of(stamp)
        bump(month, "commits")
        if month in window:
            authors[month].add(_commit_author(item))

    for item in pages.get("commit_comments", []):
        bump(_month_of(item.get("created_at")), "commit_comments")

    pr_numbers: Set[int] = set()
    for item in pages.get("pulls", []):
        pr_numbers.add(item.get("number"))
        bump(_month_of(item.get("created_at")), "open_prs")
        merged = item.get("merged_at")
        bump(_month_of(merged or item.get("closed_at")), "closed_prs")
        bump(_month_of(merged), "merged_prs")

    for item in pages.get("issues", []):
        if "pull_request" in item:
            pr_numbers.add(item.get("number"))
            continue
        bump(_month_of(item.get("created_at")), "open_issues")
        bump(_month_of(item.get("closed_at")), "closed_issues")

    for item in pages.get("issue_comments", []):
        target = "pr_comments" if _issue_number(item.get("issue_url")) in pr_numbers else "issue_comments"
        bump(_month_of(item.get("created_at")), target)

    for item in pages.get("review_comments", []):
        bump(_month_of(item.get("created_at")), "pr_comments")

    for item in pages.get("issue_events", []):
        if item.get("event") != "merged":
            continue
        month = _month_of(item.get("created_at"))
        if month in window:
            mergers[month].add((item.get("actor") or {}).get("login") or "unknown")

    for item in pages.get("stargazers", []):
        bump(_month_of(item.get("starred_at")), "stargazers")

    for item in pages.get("forks", []):
        bump(_month_of(item.get("created_at")), "forks")

    for item in pages.get("events", []):
        if item.get("type") == "WatchEvent":
            bump(_month_of(item.get("created_at")), "watchers")

    records = []
    for month in months:
        values = dict(counts[month])
        values["contributors"] = len(authors.get(month, ()))
        values["pr_mergers"] = len(mergers.get(month, ()))
        records.append(MonthlyActivity(month_end=month, **values))
    return ActivitySeries(repo_id=repo_id, months=tuple(records))


class PageCache:
    """Raw response bodies under <root>/<owner__name>/<endpoint>/page-NNNN.json."""

    def __init__(self, root: Path, repo_id: str) -> None:
        self.dir = Path(root) / repo_id
        self.index_path = self.dir / "index.json"

    def _index(self) -> Dict[str, Any]:
        if self.index_path.exists():
            return json.loads(self.index_path.read_text(encoding="utf-8"))
        return {"endpoints": {}}

    def complete(self, slug: str) -> bool:
        return bool(self._index()["endpoints"].get(slug, {}).get("complete"))

    def read(self, slug: str) -> List[bytes]:
        pages = self._index()["endpoints"][slug]["pages"]
        return [(self.dir / slug / f"page-{p:04d}.json").read_bytes() for p in range(1, pages + 1)]

    def write_page(self, slug: str, page: int, body: bytes) -> None:
        target = self.dir / slug
        target.mkdir(parents=True, exist_ok=True)
        (target / f"page-{page:04d}.json").write_bytes(body)

    def mark_complete(self, slug: str, pages: int, repo: str) -> None:
        index = self._index()
        index["repo"] = repo
        index["endpoints"][slug] = {"pages": pages, "complete": True}
        self.dir.mkdir(parents=True, exist_ok=True)
        self.index_path.write_text(json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")


class GitHubActivityClient:
    """Pages through the activity endpoints of one repository, one request at a time."""

    def __init__(
        self,
        spec: CollectionSpec,
        *,
        allow_network: bool = False,
        token: Optional[str] = None,
        base_url: str = Settings.GITHUB_API_URL,
        transport: Optional[httpx.AsyncBaseTransport] = None,
        max_retries: int = Settings.MAX_RETRIES,
        base_delay: float = 1.0,
        backoff_multiplier: float = 2.0,
        max_delay: float = 300.0,
        per_page: int = 100,
        sleep: Optional[SleepFn] = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        self.spec = spec
        self.allow_network = allow_network
        self.token = token
        self.base_url = base_url.rstrip("/")
        self.transport = transport
        self.max_retries = max_retries
        self.base_delay = base_delay
        self.backoff_multiplier = backoff_multiplier
        self.max_delay = max_delay
        self.per_page = per_page
        self.sleep = sleep or asyncio.sleep
        self.clock = clock
        self.cache = PageCache(spec.cache_dir, spec.repo_id)
        self.requests = 0

    def _headers(self, accept: str) -> Dict[str, str]:
        headers = {"Accept": accept, "User-Agent": "effort-lab", "X-GitHub-Api-Version": "2022-11-28"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _url(self, path: str, page: int) -> str:
        joiner = "&" if "?" in path else "?"
        return f"{self.base_url}/repos/{self.spec.repo}/{path}{joiner}per_page={self.per_page}&page={page}"

    def _rate_limit_delay(self, response: httpx.Response, attempt: int) -> Optional[float]:
        """Seconds to wait when `response` is a rate-limit refusal, else None."""
        limited = response.status_code == 429 or (
            response.status_code == 403
            and (response.headers.get("X-RateLimit-Remaining") == "0" or "Retry-After" in response.headers)
        )
        if not limited:
            return None
        if "Retry-After" in response.headers:
            try:
                return min(float(response.headers["Retry-After"]), self.max_delay)
            except ValueError:
                pass
        if "X-RateLimit-Reset" in response.headers:
            try:
                wait = float(response.headers["X-RateLimit-Reset"]) - self.clock()
                return min(max(wait, 0.0), self.max_delay)
            except ValueError:
                pass
        return min(self.base_delay * self.backoff_multiplier ** attempt, self.max_delay)

    async def _get(self, client: httpx.AsyncClient, slug: str, page: int) -> bytes:
        path, accept = ENDPOINTS[slug]
        url = self._url(path, page)
        for attempt in range(self.max_retries + 1):
            try:
                self.requests += 1
                response = await client.get(url, headers=self._headers(accept))
            except httpx.RequestError as exc:
                if attempt == self.max_retries:
                    raise NetworkError(f"{self.spec.repo}: {slug} request failed: {exc}",
                                       context={"repo": self.spec.repo, "endpoint": slug}) from exc
                await self.sleep(min(self.base_delay * self.backoff_multiplier ** attempt, self.max_delay))
                continue

            if response.status_code == 200:
                return response.content
            if response.status_code == 404:
                raise RepoNotFoundError(f"repository not found: {self.spec.repo}",
                                        context={"repo": self.spec.repo, "endpoint": slug})
            delay = self._rate_limit_delay(response, attempt)
            if delay is not None:
                if attempt == self.max_retries:
                    raise RateLimitError(
                        f"{self.spec.repo}: rate limit still exceeded after {self.max_retries} retries",
                        context={"repo": self.spec.repo, "endpoint": slug},
                    )
                logger.warning(f"⚠️ Rate limited on {self.spec.repo}/{slug}, waiting {delay:.1f}s")
                await self.sleep(delay)
                continue
            if response.status_code in (401, 403):
                raise AuthenticationError(
                    f"{self.spec.repo}: authentication failed ({response.status_code})",
                    context={"repo": self.spec.repo, "status": response.status_code},
                )
            if response.status_code >= 500 and attempt < self.max_retries:
                await self.sleep(min(self.base_delay * self.backoff_multiplier ** attempt, self.max_delay))
                continue
            raise NetworkError(f"{self.spec.repo}: {slug} returned HTTP {response.status_code}",
                               context={"repo": self.spec.repo, "status": response.status_code})
        raise NetworkError(f"{self.spec.repo}: {slug} exhausted retries")

    async def fetch_endpoint(self, client: Optional[httpx.AsyncClient], slug: str) -> List[Dict[str, Any]]:
        if self.cache.complete(slug):
            bodies = self.cache.read(slug)
        else:
            if not self.allow_network or client is None:
                raise NetworkDisabledError(
                    f"{self.spec.repo}: '{slug}' is not cached and network access is disabled",
                    context={"repo": self.spec.repo, "endpoint": slug},
                )
            bodies = []
            page = 1
            while True:
                body = await self._get(client, slug, page)
                self.cache.write_page(slug, page, body)
                bodies.append(body)
                if len(json.loads(body)) < self.per_page:
                    break
                page += 1
            self.cache.mark_complete(slug, len(bodies), self.spec.repo)
        items: List[Dict[str, Any]] = []
        for body in bodies:
            items.extend(json.loads(body))
        return items

    async def collect(self) -> ActivitySeries:
        pages: Dict[str, List[Dict[str, Any]]] = {}
        needs_network = not all(self.cache.complete(slug) for slug in ENDPOINTS)
        if needs_network and self.allow_network:
            async with httpx.AsyncClient(transport=self.transport, timeout=Settings.REQUEST_TIMEOUT) as client:
                for slug in ENDPOINTS:
                    pages[slug] = await self.fetch_endpoint(client, slug)
        else:
            for slug in ENDPOINTS:
                pages[slug] = await self.fetch_endpoint(None, slug)
        series = bucket_activity(self.spec.repo_id, self.spec.start, self.spec.end, pages)
        error_handler.log_info(
            f"📥 Collected {self.spec.repo}",
            months=len(series),
            commits=series.total("commits"),
            requests=self.requests,
        )
        return series


def collect(
    spec: CollectionSpec,
    *,
    allow_network: bool = False,
    transport: Optional[httpx.AsyncBaseTransport] = None,
    sleep: Optional[SleepFn] = None,
) -> ActivitySeries:
    token = get_api_token("github", env_var=spec.token_env) if allow_network else None
    client = GitHubActivityClient(spec, allow_network=allow_network, token=token, transport=transport, sleep=sleep)
    try:
        return asyncio.run(client.collect())
    except NetworkError as exc:
        error_handler.handle_network_error(exc, spec.repo)
        raise


async def collect_many(specs: Sequence[CollectionSpec], *, allow_network: bool = False, **kwargs) -> List[ActivitySeries]:
    """Different repositories concurrently; each repository stays sequential."""
    clients = [
        GitHubActivityClient(
            s,
            allow_network=allow_network,
            token=get_api_token("github", env_var=s.token_env) if allow_network else None,
            **kwargs,
        )
        for s in specs
    ]
    return list(await asyncio.gather(*(c.collect() for c in clients)))


# --- fixtures -------------------------------------------------------------------

def to_fixture(series: ActivitySeries, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for month in series.months:
        counts = month.counts()
        rows.append([month.month_end.isoformat()] + [counts[FIELD_BY_COLUMN[c]] for c in ACTIVITY_FEATURES])
    pd.DataFrame(rows, columns=list(FIXTURE_COLUMNS)).to_csv(path, index=False, lineterminator="\n")
    return path


def from_fixture(path: Union[str, Path], repo_id: Optional[str] = None) -> ActivitySeries:
    """Read a 15-column monthly fixture: `dates` followed by the counts in FIXTURE_COLUMNS order."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError as exc:
        raise FixtureError(f"fixture not found: {path}", context={"path": str(path)}) from exc
    except pd.errors.EmptyDataError as exc:
        raise FixtureError(f"empty fixture: {path}", context={"path": str(path)}) from exc

    columns = [c.strip() for c in frame.columns]
    if columns != list(FIXTURE_COLUMNS):
        missing = [c for c in FIXTURE_COLUMNS if c not in columns]
        detail = f"missing column '{missing[0]}'" if missing else f"columns out of order: {columns}"
        raise FixtureError(f"{path.name}: {detail}", context={"path": str(path)})
    frame.columns = columns

    months = []
    for i, record in enumerate(frame.itertuples(index=False), start=1):
        values = record._asdict()
        try:
            day = date.fromisoformat(values["dates"].strip())
        except ValueError as exc:
            raise FixtureError(f"{path.name}: bad date '{values['dates']}' at row {i}",
                               context={"row": i, "column": "dates"}) from exc
        counts = {}
        for column in ACTIVITY_FEATURES:
            raw = str(values[column]).strip()
            if not raw.lstrip("-").isdigit():
                raise FixtureError(f"{path.name}: non-integer value '{raw}' in column '{column}' at row {i}",
                                   context={"row": i, "column": column})
            counts[FIELD_BY_COLUMN[column]] = int(raw)
        months.append(MonthlyActivity(month_end=day, **counts))
    if not months:
        raise FixtureError(f"empty fixture: {path}", context={"path": str(path)})
    return ActivitySeries(repo_id=repo_id or path.stem, months=tuple(months))
