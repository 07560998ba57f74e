#!/usr/bin/env python3
"""
DW-MS 多重散射批次工具 - CLI 入口
呼叫 DwmsProcessor 執行單中心散射、多中心連續態、束縛態掃描或驗證

用法：python cli/dwms.py <mode> --config <path> [--out <dir>] [--workers N] [--verbose] [--dump-radial]
"""

import sys
import argparse
from pathlib import Path

# 將專案根目錄加入 Python 路徑
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from pydantic import ValidationError

from config import OutputConfig, ProcessingConfig
from services.dwms_processor import EXIT_ERROR, DwmsProcessor
from services.schemas import ConfigError, RunConfig, RunMode, load_config


def normalize_path(input_path: str) -> Path:
    """正規化路徑"""
    input_path = input_path.strip().strip('"').strip("'")
    return Path(input_path).expanduser().resolve()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dwms",
        description="DW-MS：扭曲波多重散射計算（Rydberg 單位）",
    )
    parser.add_argument("mode", choices=[mode.value for mode in RunMode], help="執行模式")
    parser.add_argument("--config", required=True, help="設定檔（JSON，format = dwms-config）")
    parser.add_argument("-o", "--out", help=f"輸出目錄（預設 {OutputConfig.OUTPUT_DIR}）")
    parser.add_argument("--workers", type=int, default=ProcessingConfig.MAX_WORKERS,
                        help="能量掃描的平行執行緒數")
    parser.add_argument("--verbose", action="store_true", help="逐能量 / 逐中心的詳細輸出")
    parser.add_argument("--dump-radial", action="store_true", help="輸出徑向解的除錯 CSV")
    return parser


def main():
    parser = build_parser()
    args = parser.parse_args()
    if args.workers < 1:
        parser.error("--workers 必須 ≥ 1")

    try:
        config_path = normalize_path(args.config)
        problem = load_config(config_path)
        run = RunConfig(
            config_path=config_path,
            mode=RunMode(args.mode),
            output_dir=normalize_path(args.out) if args.out else OutputConfig.OUTPUT_DIR,
            workers=args.workers,
            verbose=args.verbose,
            dump_radial=args.dump_radial,
            problem=problem,
        )
        status = DwmsProcessor(run).process()
    except ConfigError as e:
        print(f"\n❌ 錯誤：{e}")
        sys.exit(EXIT_ERROR)
    except ValidationError as e:
        details = "; ".join(err["msg"] for err in e.errors())
        print(f"\n❌ 錯誤：執行設定不合法：{details}")
        sys.exit(EXIT_ERROR)
    except (ValueError, RuntimeError) as e:
        print(f"\n❌ 錯誤：{type(e).__name__}: {e}")
        sys.exit(EXIT_ERROR)
    except Exception as e:
        print(f"\n❌ 發生錯誤：{e}")
        import traceback
        traceback.print_exc()
        sys.exit(EXIT_ERROR)
    sys.exit(status)


if __name__ == "__main__":
    main()
