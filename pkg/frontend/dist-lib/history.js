// Append-only session history with a navigation cursor.
//
// Entries are never removed or replaced within a session; moving back
// and committing again appends rather than truncating, so every state
// the user ever committed stays reachable.
export class History {
    entries = [];
    cursor = -1;
    get length() {
        return this.entries.length;
    }
    get position() {
        return this.cursor;
    }
    current() {
        return this.cursor >= 0 ? this.entries[this.cursor] : null;
    }
    push(entry) {
        this.entries.push(entry);
        this.cursor = this.entries.length - 1;
    }
    canBack() {
        return this.cursor > 0;
    }
    canForward() {
        return this.cursor >= 0 && this.cursor < this.entries.length - 1;
    }
    back() {
        if (!this.canBack())
            return null;
        this.cursor--;
        return this.entries[this.cursor];
    }
    forward() {
        if (!this.canForward())
            return null;
        this.cursor++;
        return this.entries[this.cursor];
    }
    all() {
        return this.entries;
    }
}
