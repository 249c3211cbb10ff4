/** One in-flight synthesis at a time; clicks during a run coalesce so
 * only the latest queued selection is submitted afterwards. */

export class SingleFlightQueue<T, R> {
  private busy = false;
  private pending: T | null = null;

  constructor(
    private readonly run: (task: T) => Promise<R>,
    private readonly onResult: (task: T, result: R) => void,
    private readonly onError: (task: T, error: unknown) => void
  ) {}

  get inFlight(): boolean {
    return this.busy;
  }

  get queued(): T | null {
    return this.pending;
  }

  submit(task: T): void {
    if (this.busy) {
      this.pending = task; // coalesce: only the latest survives
      return;
    }
    void this.launch(task);
  }

  private async launch(task: T): Promise<void> {
    this.busy = true;
    try {
      const result = await this.run(task);
      this.onResult(task, result);
    } catch (error) {
      this.onError(task, error);
    } finally {
      this.busy = false;
      const next = this.pending;
      this.pending = null;
      if (next !== null) {
        void this.launch(next);
      }
    }
  }
}
