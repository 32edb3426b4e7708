import logging
import time
from typing import Any, Callable

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse

from app import settings
from app.cli import run_design, run_oc, run_power_curve, run_simulation
from app.config import DesignConfig, OcConfig, PowerCurveConfig, SimulateConfig
from app.exceptions import NIDesignError, NumericalFailure
from app.logging_config import logging_config
from app.report import OutputFormat, frame_records, oc_frame, render_design

logger = logging.getLogger(__name__)

app = FastAPI(
    title="非劣性試験デザイン API",
    description="実薬対照非劣性試験のサンプルサイズ設計・動作特性・モンテカルロ検証のAPI",
    version="1.0.0"
)

# CORS設定
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.API_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


# ミドルウェア: リクエストログ記録
@app.middleware("http")
async def log_requests(request: Request, call_next):
    start_time = time.perf_counter()
    response = await call_next(request)
    duration = time.perf_counter() - start_time

    threshold = logging_config.RUNTIME_BUDGETS["api_response_time"]
    if duration > threshold:
        logging_config.log_performance_alert("api_response_time", duration, threshold)

    logging_config.log_api_request(
        method=request.method,
        path=str(request.url.path),
        status_code=response.status_code,
        duration=duration
    )

    return response



def _handle(operation: str, fn: Callable[[], Any]) -> Any:
    """ドメイン例外を HTTP ステータスに対応付ける"""
    try:
        return fn()
    except NumericalFailure as e:
        logging_config.log_numerical_failure(operation, e)
        raise HTTPException(status_code=500, detail=f"数値計算に失敗しました: {e}")
    except (NIDesignError, ValueError) as e:
        logger.warning(f"{operation} の入力エラー: {e}")
        raise HTTPException(status_code=400, detail=str(e))


@app.get("/", tags=["root"])
def read_root():
    return {"message": "NI Design API サーバー起動中", "version": app.version}


@app.post("/design", tags=["design"])
def design(config: DesignConfig, format: OutputFormat = OutputFormat.JSON):
    report = _handle("design", lambda: run_design(config))
    if format is OutputFormat.JSON:
        return report.model_dump(mode="json")
    return PlainTextResponse(render_design(report, format))


@app.post("/oc", tags=["design"])
def operating_characteristics(config: OcConfig):
    return _handle("oc", lambda: frame_records(oc_frame(run_oc(config))))


@app.post("/power-curve", tags=["design"])
def power_curve(config: PowerCurveConfig):
    return _handle("power_curve", lambda: frame_records(run_power_curve(config)))


@app.post("/simulate", tags=["simulation"])
def simulate(config: SimulateConfig):
    return _handle("simulate", lambda: frame_records(run_simulation(config)))
