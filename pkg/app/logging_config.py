import logging
import logging.handlers
import json
import time
import uuid
from pathlib import Path
from typing import Any, Dict, Optional

from app import settings

# 同じプロセスで何度初期化してもハンドラーを重複させないための印
_HANDLER_TAG = "_ni_design_handler"


def _tagged(handler: logging.Handler) -> logging.Handler:
    setattr(handler, _HANDLER_TAG, True)
    return handler


def _has_tagged(logger: logging.Logger) -> bool:
    return any(getattr(h, _HANDLER_TAG, False) for h in logger.handlers)


class AuditLogger:
    """デザイン・シミュレーション実行の監査ログ"""

    def __init__(self, log_dir: str = "logs"):
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.logger = logging.getLogger('audit')
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        if _has_tagged(self.logger):
            return

        formatter = logging.Formatter(
            '%(asctime)s | %(levelname)s | %(run_id)s | %(action)s | %(resource)s | %(details)s'
        )
        # 日次ローテーション、1年間保持
        file_handler = logging.handlers.TimedRotatingFileHandler(
            self.log_dir / "audit.log",
            when='midnight',
            interval=1,
            backupCount=365,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        self.logger.addHandler(_tagged(file_handler))

    def log_event(self, run_id: str, action: str, resource: str, details: Dict[str, Any]):
        """監査イベントを記録"""
        extra = {
            'run_id': run_id,
            'action': action,
            'resource': resource,
            'details': json.dumps(details, ensure_ascii=False, default=str)
        }
        self.logger.info('Audit event', extra=extra)


class PerformanceMonitor:
    """名前付きタイマー"""

    def __init__(self):
        self.metrics = {}

    def start_timer(self, operation: str):
        self.metrics[operation] = {
            'start_time': time.perf_counter(),
            'end_time': None,
            'duration': None
        }

    def end_timer(self, operation: str) -> float:
        """経過秒数を返す。開始していない操作は 0.0"""
        if operation not in self.metrics:
            return 0.0
        entry = self.metrics[operation]
        entry['end_time'] = time.perf_counter()
        entry['duration'] = entry['end_time'] - entry['start_time']
        return entry['duration']


class LoggingConfig:
    """ログ設定管理"""

    # 実行時間の目安（秒）。超えた場合はパフォーマンスアラートを出す
    RUNTIME_BUDGETS = {
        'design': 1.0,
        'oc': 1.0,
        'power_curve': 1.0,
        'simulation': 300.0,
        'api_response_time': 2.0,
    }

    def __init__(self, log_dir: str = settings.LOG_DIR, level: str = settings.LOG_LEVEL):
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.level = getattr(logging, level, logging.INFO)

        self._setup_application_logger()
        self.audit_logger = AuditLogger(str(self.log_dir))
        self.performance_monitor = PerformanceMonitor()

    def _setup_application_logger(self):
        """アプリケーションログの設定（ファイル + 標準エラー）"""
        root_logger = logging.getLogger()
        root_logger.setLevel(self.level)
        if _has_tagged(root_logger):
            return

        formatter = logging.Formatter(
            '%(asctime)s | %(name)s | %(levelname)s | %(message)s'
        )
        # 日次ローテーション、30日間保持
        file_handler = logging.handlers.TimedRotatingFileHandler(
            self.log_dir / "application.log",
            when='midnight',
            interval=1,
            backupCount=30,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)

        # 標準出力はレポート専用なのでコンソールは標準エラーに出す
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        console_handler.setLevel(logging.WARNING)

        root_logger.addHandler(_tagged(file_handler))
        root_logger.addHandler(_tagged(console_handler))

    @staticmethod
    def new_run_id() -> str:
        return uuid.uuid4().hex[:12]

    def log_api_request(self, method: str, path: str, status_code: int, duration: float):
        """APIリクエストをログ記録"""
        logger = logging.getLogger('api')

        log_data = {
            'method': method,
            'path': path,
            'status_code': status_code,
            'duration': f"{duration:.3f}s",
        }

        if status_code >= 400:
            logger.warning(f"API request: {log_data}")
        else:
            logger.info(f"API request: {log_data}")

    def log_design_run(self, run_id: str, action: str, duration: float, details: Dict[str, Any]):
        """デザイン系コマンド（design / oc / power_curve）の実行を記録"""
        logger = logging.getLogger('design')
        logger.info(f"Design run: {{'run_id': '{run_id}', 'action': '{action}', 'duration': '{duration:.3f}s'}}")
        self.audit_logger.log_event(run_id=run_id, action=action, resource='design', details=details)
        self._check_budget(action, duration)

    def log_simulation_run(self, run_id: str, duration: float, details: Dict[str, Any]):
        """モンテカルロ検証の実行を記録"""
        logger = logging.getLogger('simulation')
        logger.info(f"Simulation run: {{'run_id': '{run_id}', 'duration': '{duration:.3f}s'}}")
        self.audit_logger.log_event(run_id=run_id, action='simulate', resource='simulation', details=details)
        self._check_budget('simulation', duration)

    def log_numerical_failure(self, operation: str, error: Exception, details: Optional[Dict[str, Any]] = None):
        """数値計算の失敗を記録"""
        logger = logging.getLogger('numerics')
        log_data = {
            'operation': operation,
            'error': str(error),
            'details': details or {},
        }
        logger.error(f"Numerical failure: {log_data}")

    def log_performance_alert(self, metric: str, value: float, threshold: float):
        """パフォーマンスアラートをログ記録"""
        logger = logging.getLogger('performance')

        log_data = {
            'metric': metric,
            'value': value,
            'threshold': threshold,
            'exceeded': value > threshold
        }

        logger.warning(f"Performance alert: {log_data}")

    def _check_budget(self, metric: str, duration: float):
        threshold = self.RUNTIME_BUDGETS.get(metric)
        if threshold is not None and duration > threshold:
            self.log_performance_alert(metric, duration, threshold)


# グローバルログ設定インスタンス
logging_config = LoggingConfig()
