from pathlib import Path

from dotenv import load_dotenv

# --------------------------------------------------
# Locate Project Root (.env should be in root folder)
# --------------------------------------------------
ROOT_DIR = Path(__file__).resolve().parents[1]
ENV_PATH = ROOT_DIR / ".env"

# --------------------------------------------------
# Load .env File; real environment variables win
# --------------------------------------------------
ENV_LOADED = load_dotenv(ENV_PATH, override=False) if ENV_PATH.exists() else False
