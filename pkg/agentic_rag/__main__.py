import sys

from agentic_rag.cli import main

sys.exit(main())
