"""非劣性試験デザインの例外階層"""

from typing import List, Optional


class NIDesignError(Exception):
    """本パッケージが送出する例外の基底クラス"""


class InvalidInputError(NIDesignError, ValueError):
    """有限でない値や範囲外の引数"""


class DomainError(InvalidInputError):
    """関数の定義域外の値（分位点の 0/1、PE ≥ 1 など）"""


class PreconditionError(NIDesignError):
    """数式が前提とする条件が満たされない場合"""


class DesignInfeasibleError(NIDesignError):
    """設計対立仮説が検出可能域の外にある場合

    ``bound`` は破られた条件の識別子で、``conditional_detectability`` または
    ``unconditional_detectability`` のいずれか。
    """

    def __init__(self, message: str, bound: str):
        super().__init__(message)
        self.bound = bound


class NumericalFailure(NIDesignError, ArithmeticError):
    """求根が区間を確保できない、または収束しない場合"""


class ConfigError(InvalidInputError):
    """設定ファイルの読込・検証エラー"""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or []

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        return base + "\n" + "\n".join(f"  - {d}" for d in self.diagnostics)
