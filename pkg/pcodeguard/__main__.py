from pcodeguard.main import main

main()
