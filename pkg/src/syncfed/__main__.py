import sys

from syncfed.harness.cli import main

sys.exit(main())
