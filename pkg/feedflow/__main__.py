# feedflow/__main__.py
import sys

from feedflow.cli.main import main

sys.exit(main())
