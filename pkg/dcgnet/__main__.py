import sys

from dcgnet.cli import main

sys.exit(main())
