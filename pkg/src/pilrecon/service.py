"""Session-oriented HTTP API for the interactive guided workflow.

A session holds one uploaded filament map plus the user's reference points.
Reconstruction jobs run on a small worker pool; clients poll job state and
fetch published result versions.  Results are immutable once published and
a session runs at most one job at a time.

Endpoints (JSON unless noted):

* ``POST /api/sessions``                    multipart upload, field ``filament``
* ``GET  /api/sessions/{sid}``              session state
* ``POST /api/sessions/{sid}/points``       {"add": [[row, col, pol]...], "remove": [[row, col]...]}
* ``POST /api/sessions/{sid}/reconstruct``  {"members", "iterations", "strategy", "poles", "warm_start"}
* ``GET  /api/jobs/{jid}``                  job state and progress
* ``GET  /api/sessions/{sid}/results/{version}.conf``  16-bit P5 (or JSON array
  when the request prefers ``application/json``)
* ``GET  /api/sessions/{sid}/results/{version}.bin``   8-bit P5 (or JSON)

Errors are JSON ``{"code", "message"}``.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, Response, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import ensemble as ens
from .geometry import GridSpec, ReferencePointSet
from .loss import LossWeights
from .rasters import (
    ConfidenceMap,
    FilamentMask,
    PolarityMap,
    RasterFormatError,
    decode_raster,
    encode_raster,
    save_raster,
    save_reference_points,
)
from .trainer import TrainConfig

INTERACTIVE_MAX_MEMBERS = 8
INTERACTIVE_MAX_ITERATIONS = 30000
POLL_INTERVAL_HINT_MS = 500


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class ResultVersion:
    version: int
    mean_map: ConfidenceMap
    binarized: PolarityMap
    members: int
    strategy: str
    options: dict


@dataclass
class Job:
    id: str
    session_id: str
    state: str = "queued"  # queued | running | done | failed
    iteration: int = 0
    iterations_total: int = 0
    iterations_run: int = 0  # actual steps taken (less than total under plateau stop)
    breakdown: dict | None = None
    result_version: int | None = None
    error: str | None = None


@dataclass
class Session:
    id: str
    filaments: FilamentMask
    spec: GridSpec
    points: dict = field(default_factory=dict)  # (row, col) -> polarity
    points_version: int = 0
    results: dict = field(default_factory=dict)  # version -> ResultVersion
    member_params: list = field(default_factory=list)  # latest snapshot per member
    active_job: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def refs(self) -> ReferencePointSet:
        points = tuple((r, c, p) for (r, c), p in sorted(self.points.items()))
        return ReferencePointSet(points, provenance="user")


class ServiceState:
    """In-memory store plus a bounded worker pool for reconstruction jobs."""

    def __init__(self, snapshot_dir=None, max_pixels=512 * 1024, workers=2):
        self.sessions: dict[str, Session] = {}
        self.jobs: dict[str, Job] = {}
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        self.max_pixels = max_pixels
        self.lock = threading.Lock()
        self.semaphore = threading.Semaphore(workers)

    def new_session(self, filaments: FilamentMask, spec: GridSpec) -> Session:
        session = Session(id=secrets.token_hex(8), filaments=filaments, spec=spec)
        with self.lock:
            self.sessions[session.id] = session
        self.snapshot(session)
        return session

    def session(self, sid: str) -> Session:
        with self.lock:
            if sid not in self.sessions:
                raise ApiError(404, f"unknown session {sid}")
            return self.sessions[sid]

    def job(self, jid: str) -> Job:
        with self.lock:
            if jid not in self.jobs:
                raise ApiError(404, f"unknown job {jid}")
            return self.jobs[jid]

    def snapshot(self, session: Session) -> None:
        if self.snapshot_dir is None:
            return
        outdir = self.snapshot_dir / session.id
        outdir.mkdir(parents=True, exist_ok=True)
        save_raster(session.filaments, outdir / "filaments.pgm")
        save_reference_points(session.refs(), outdir / "points.txt")


def _decode_poles(options: dict) -> tuple[int, int]:
    poles = options.get("poles", [1, -1])
    if (not isinstance(poles, (list, tuple)) or len(poles) != 2
            or any(p not in (-1, 1) for p in poles)):
        raise ApiError(422, "poles must be a pair of +1/-1 values")
    return int(poles[0]), int(poles[1])


def _run_job(state: ServiceState, session: Session, job: Job, options: dict) -> None:
    with state.semaphore:
        job.state = "running"
        try:
            members = options["members"]
            strategy = options["strategy"]
            poles = _decode_poles(options)
            config = TrainConfig.interactive(
                iterations=options["iterations"],
                record_every=max(1, options["iterations"] // 50),
            )
            warm = None
            if options.get("warm_start") and session.member_params:
                warm = session.member_params
            weights = LossWeights(pole_prior=options.get("lam_pole", 1.0))
            job.iterations_total = members * config.iterations

            def progress(member, iteration, breakdown):
                done = member * config.iterations + min(iteration, config.iterations)
                if done > job.iteration:
                    job.iteration = done
                    job.breakdown = breakdown.as_dict()

            models = ens.train_ensemble(
                session.filaments, session.spec, session.refs(), poles, weights,
                config, members=members, base_seed=options.get("base_seed", 0),
                warm_starts=warm, progress_cb=progress,
            )
            maps = ens.member_maps(models, session.spec)
            result = ens.aggregate(maps, strategy)
            with session.lock:
                version = len(session.results) + 1
                session.results[version] = ResultVersion(
                    version=version,
                    mean_map=result.mean_map,
                    binarized=result.binarized,
                    members=members,
                    strategy=strategy,
                    options=dict(options),
                )
                session.member_params = [m.params for m in models]
                session.active_job = None
            job.iteration = job.iterations_total
            job.iterations_run = sum(m.history[-1][0] for m in models)
            job.result_version = version
            job.state = "done"
        except Exception as exc:  # published state must stay consistent
            with session.lock:
                session.active_job = None
            job.error = f"{type(exc).__name__}: {exc}"
            job.state = "failed"


def create_app(snapshot_dir=None, max_pixels=512 * 1024, cors_origin="*", workers=2) -> FastAPI:
    state = ServiceState(snapshot_dir=snapshot_dir, max_pixels=max_pixels, workers=workers)
    app = FastAPI(title="pilrecon interactive service")
    app.state.store = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[cors_origin] if cors_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ApiError)
    async def api_error_handler(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.status, "message": exc.message})

    def session_payload(session: Session) -> dict:
        with session.lock:
            return {
                "session_id": session.id,
                "height": session.filaments.height,
                "width": session.filaments.width,
                "points_version": session.points_version,
                "points": [[r, c, p] for (r, c), p in sorted(session.points.items())],
                "result_versions": sorted(session.results),
                "active_job": session.active_job,
                "poll_interval_ms": POLL_INTERVAL_HINT_MS,
            }

    @app.post("/api/sessions", status_code=201)
    async def create_session(filament: UploadFile):
        raw = await filament.read()
        try:
            mask = decode_raster(raw, "filament", name=filament.filename or "upload")
        except RasterFormatError as exc:
            raise ApiError(400, f"bad filament raster: {exc}")
        if mask.data.size > state.max_pixels:
            raise ApiError(413, f"raster exceeds {state.max_pixels} pixels")
        session = state.new_session(mask, GridSpec(mask.height, mask.width))
        return session_payload(session)

    @app.get("/api/sessions/{sid}")
    async def get_session(sid: str):
        return session_payload(state.session(sid))

    @app.post("/api/sessions/{sid}/points")
    async def edit_points(sid: str, edits: dict):
        session = state.session(sid)
        add = edits.get("add", [])
        remove = edits.get("remove", [])
        with session.lock:
            staged = dict(session.points)
            for item in remove:
                if len(item) != 2:
                    raise ApiError(422, f"remove entries are [row, col], got {item}")
                staged.pop((int(item[0]), int(item[1])), None)
            for item in add:
                if len(item) != 3:
                    raise ApiError(422, f"add entries are [row, col, polarity], got {item}")
                row, col, pol = int(item[0]), int(item[1]), int(item[2])
                if pol not in (-1, 1):
                    raise ApiError(422, f"polarity must be +1 or -1, got {pol}")
                if not (0 <= row < session.filaments.height and 0 <= col < session.filaments.width):
                    raise ApiError(422, f"point ({row}, {col}) outside the raster")
                staged[(row, col)] = pol
            session.points = staged
            session.points_version += 1
        state.snapshot(session)
        return session_payload(session)

    @app.post("/api/sessions/{sid}/reconstruct", status_code=202)
    async def start_reconstruction(sid: str, options: dict | None = None):
        session = state.session(sid)
        options = dict(options or {})
        options.setdefault("members", 4)
        options.setdefault("iterations", 3000)
        options.setdefault("strategy", "mean")
        if not 1 <= options["members"] <= INTERACTIVE_MAX_MEMBERS:
            raise ApiError(422, f"members must be in 1..{INTERACTIVE_MAX_MEMBERS}")
        if not 1 <= options["iterations"] <= INTERACTIVE_MAX_ITERATIONS:
            raise ApiError(422, f"iterations must be in 1..{INTERACTIVE_MAX_ITERATIONS}")
        if options["strategy"] not in ("mean", "majority"):
            raise ApiError(422, "strategy must be 'mean' or 'majority'")
        _decode_poles(options)
        with session.lock:
            if session.active_job is not None:
                raise ApiError(409, f"job {session.active_job} already running on this session")
            job = Job(id=secrets.token_hex(8), session_id=sid)
            session.active_job = job.id
        with state.lock:
            state.jobs[job.id] = job
        worker = threading.Thread(target=_run_job, args=(state, session, job, options), daemon=True)
        worker.start()
        return {"job_id": job.id, "poll_interval_ms": POLL_INTERVAL_HINT_MS}

    @app.get("/api/jobs/{jid}")
    async def get_job(jid: str):
        job = state.job(jid)
        return {
            "job_id": job.id,
            "session_id": job.session_id,
            "state": job.state,
            "progress": {
                "iteration": job.iteration,
                "iterations_total": job.iterations_total,
                "iterations_run": job.iterations_run,
                "breakdown": job.breakdown,
            },
            "result_version": job.result_version,
            "error": job.error,
        }

    @app.get("/api/sessions/{sid}/results/{name}")
    async def get_result(sid: str, name: str, request: Request):
        session = state.session(sid)
        if "." not in name:
            raise ApiError(404, "result name must be '{version}.conf' or '{version}.bin'")
        version_s, kind = name.rsplit(".", 1)
        if kind not in ("conf", "bin") or not version_s.isdigit():
            raise ApiError(404, f"no such result {name}")
        version = int(version_s)
        with session.lock:
            if version not in session.results:
                raise ApiError(404, f"no result version {version}")
            result = session.results[version]
        accept = request.headers.get("accept", "")
        raster = result.mean_map if kind == "conf" else result.binarized
        if "application/json" in accept:
            return JSONResponse({
                "version": version,
                "kind": kind,
                "height": raster.height,
                "width": raster.width,
                "members": result.members,
                "strategy": result.strategy,
                "options": result.options,
                "values": raster.data.tolist(),
            })
        return Response(
            content=encode_raster(raster),
            media_type="image/x-portable-graymap",
            headers={
                "X-Members": str(result.members),
                "X-Strategy": result.strategy,
            },
        )

    return app
