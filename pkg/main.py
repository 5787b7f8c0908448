from Common import get_service_logger
from FlowLab.main import app

logger = get_service_logger(__name__)

if __name__ == "__main__":
    logger.debug("flowlab started")
    app()
