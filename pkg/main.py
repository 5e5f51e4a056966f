import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from cli.commands import main
from config.settings import AppConfig
import logging

# Configuração de logging
logging.basicConfig(
    level=getattr(logging, AppConfig.LOG_LEVEL.upper(), logging.INFO),
    format=AppConfig.LOG_FORMAT
)

if __name__ == "__main__":
    sys.exit(main())
