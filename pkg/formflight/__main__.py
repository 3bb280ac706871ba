from formflight.cli import main

raise SystemExit(main())
