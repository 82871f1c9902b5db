import os
from dotenv import load_dotenv

load_dotenv()
RUNS_DIR = os.getenv('RUNS_DIR', 'runs')
