# msfcn/__main__.py
"""`python -m msfcn`: caps BLAS threads from MSFCN_THREADS before numpy loads."""
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv(Path(__file__).resolve().parent.parent / ".env.local", override=False)
_threads = os.environ.get("MSFCN_THREADS", "").strip()
if _threads.isdigit() and int(_threads) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from msfcn.cli import main  # noqa: E402

raise SystemExit(main())
